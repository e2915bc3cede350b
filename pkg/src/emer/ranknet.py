"""Set-attention scorer with hand-written reverse-mode gradients.

The network maps an ``(n, 17)`` candidate feature matrix to ``n`` scores:

    input projection -> L x [pre-norm multi-head self-attention + pre-norm
    GELU feed-forward (width 4 * d_model)] -> final layer norm -> linear head

There is no positional encoding over candidate index, so the forward pass
is permutation-equivariant; order information reaches the model only
through the normalized-rank features. ``isolated=True`` skips every
attention sub-layer, which makes each candidate's score a function of its
own row only.

All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from emer.features import N_FEATURES

LN_EPS = 1e-5
CHECKPOINT_MAGIC = "EMER-CHECKPOINT"
CHECKPOINT_VERSION = 1

_GELU_C = np.sqrt(2.0 / np.pi)


def _param_shapes(d_model: int, n_layers: int) -> List[Tuple[str, Tuple[int, ...]]]:
    d, ff = d_model, 4 * d_model
    shapes: List[Tuple[str, Tuple[int, ...]]] = [("in.W", (N_FEATURES, d)), ("in.b", (d,))]
    for layer in range(n_layers):
        p = f"block{layer}."
        shapes += [
            (p + "ln1.g", (d,)),
            (p + "ln1.b", (d,)),
            (p + "attn.Wq", (d, d)),
            (p + "attn.bq", (d,)),
            (p + "attn.Wk", (d, d)),
            (p + "attn.bk", (d,)),
            (p + "attn.Wv", (d, d)),
            (p + "attn.bv", (d,)),
            (p + "attn.Wo", (d, d)),
            (p + "attn.bo", (d,)),
            (p + "ln2.g", (d,)),
            (p + "ln2.b", (d,)),
            (p + "ff.W1", (d, ff)),
            (p + "ff.b1", (ff,)),
            (p + "ff.W2", (ff, d)),
            (p + "ff.b2", (d,)),
        ]
    shapes += [("final_ln.g", (d,)), ("final_ln.b", (d,)), ("out.W", (d, 1)), ("out.b", (1,))]
    return shapes


def param_count(d_model: int, n_layers: int) -> int:
    """Closed-form parameter count of the architecture."""
    d = d_model
    per_block = 2 * d + 4 * (d * d + d) + 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d)
    return (N_FEATURES * d + d) + n_layers * per_block + 2 * d + (d + 1)


@dataclass
class ModelParams:
    """All learnable tensors of the scorer, keyed in a fixed declared order."""

    d_model: int
    n_layers: int
    n_heads: int
    tensors: Dict[str, np.ndarray]
    isolated: bool = False

    def __post_init__(self):
        _check_shape_args(self.d_model, self.n_layers, self.n_heads)
        expected = _param_shapes(self.d_model, self.n_layers)
        if [k for k, _ in expected] != list(self.tensors):
            raise ValueError("tensor names do not match the declared parameter order")
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.tensors[name].shape}")

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.d_model,
            self.n_layers,
            self.n_heads,
            {k: v.copy() for k, v in self.tensors.items()},
            isolated=self.isolated,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    def with_flat(self, vector: np.ndarray) -> "ModelParams":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {vector.size}")
        out, offset = {}, 0
        for name, t in self.tensors.items():
            out[name] = vector[offset : offset + t.size].reshape(t.shape).copy()
            offset += t.size
        return ModelParams(self.d_model, self.n_layers, self.n_heads, out, isolated=self.isolated)

    def equals(self, other: "ModelParams") -> bool:
        return (
            (self.d_model, self.n_layers, self.n_heads, self.isolated)
            == (other.d_model, other.n_layers, other.n_heads, other.isolated)
            and all(np.array_equal(a, other.tensors[k]) for k, a in self.tensors.items())
        )


def _check_shape_args(d_model: int, n_layers: int, n_heads: int) -> None:
    if d_model <= 0 or n_heads <= 0 or n_layers < 0:
        raise ValueError(f"invalid architecture d_model={d_model} layers={n_layers} heads={n_heads}")
    if d_model % n_heads:
        raise ValueError(f"d_model={d_model} is not divisible by heads={n_heads}")


def init(seed: int, d_model: int = 32, n_layers: int = 2, n_heads: int = 4, isolated: bool = False) -> ModelParams:
    """Seeded init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, norm gains 1."""
    _check_shape_args(d_model, n_layers, n_heads)
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _param_shapes(d_model, n_layers):
        leaf = name.rsplit(".", 1)[1]
        if leaf.startswith("W"):
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif leaf == "g":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(d_model, n_layers, n_heads, tensors, isolated=isolated)


# --- primitives -------------------------------------------------------------


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _layer_norm_backward(dy, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = rstd * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(u):
    inner = _GELU_C * (u + 0.044715 * (u * u * u))
    t = np.tanh(inner)
    return 0.5 * u * (1.0 + t), t


def _gelu_grad(u, t):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * (u * u))
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner


def _softmax(s):
    e = s - s.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


# --- forward / backward -----------------------------------------------------


@dataclass
class _Trace:
    x: np.ndarray
    blocks: List[dict] = field(default_factory=list)
    final_ln: Optional[tuple] = None
    z: Optional[np.ndarray] = None


def _forward(params: ModelParams, features: np.ndarray) -> Tuple[np.ndarray, _Trace]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != N_FEATURES:
        raise ValueError(f"features must have shape (n, {N_FEATURES}), got {features.shape}")
    if features.shape[0] < 1:
        raise ValueError("need at least one candidate")
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite input features")
    T = params.tensors
    n = features.shape[0]
    H = params.n_heads
    dh = params.d_model // H
    scale = 1.0 / np.sqrt(dh)

    trace = _Trace(x=features)
    h = features @ T["in.W"] + T["in.b"]
    for layer in range(params.n_layers):
        p = f"block{layer}."
        cache: dict = {}
        if not params.isolated:
            a, cache["ln1"] = _layer_norm(h, T[p + "ln1.g"], T[p + "ln1.b"])
            q = (a @ T[p + "attn.Wq"] + T[p + "attn.bq"]).reshape(n, H, dh).transpose(1, 0, 2)
            k = (a @ T[p + "attn.Wk"] + T[p + "attn.bk"]).reshape(n, H, dh).transpose(1, 0, 2)
            v = (a @ T[p + "attn.Wv"] + T[p + "attn.bv"]).reshape(n, H, dh).transpose(1, 0, 2)
            P = _softmax((q * scale) @ k.transpose(0, 2, 1))
            o = (P @ v).transpose(1, 0, 2).reshape(n, -1)
            h = h + o @ T[p + "attn.Wo"] + T[p + "attn.bo"]
            cache.update(a=a, q=q, k=k, v=v, P=P, o=o)
        c, cache["ln2"] = _layer_norm(h, T[p + "ln2.g"], T[p + "ln2.b"])
        u = c @ T[p + "ff.W1"] + T[p + "ff.b1"]
        gu, t = _gelu(u)
        h = h + gu @ T[p + "ff.W2"] + T[p + "ff.b2"]
        cache.update(c=c, u=u, t=t, gu=gu)
        trace.blocks.append(cache)
    z, trace.final_ln = _layer_norm(h, T["final_ln.g"], T["final_ln.b"])
    trace.z = z
    scores = (z @ T["out.W"] + T["out.b"])[:, 0]
    return scores, trace


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """One score per candidate row."""
    return _forward(params, features)[0]


def backward(params: ModelParams, features: np.ndarray, upstream: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients of ``sum(upstream * forward(params, features))`` for every tensor."""
    scores, trace = _forward(params, features)
    return _backward(params, trace, upstream, scores.shape[0])


def forward_backward(params: ModelParams, features: np.ndarray, loss_grad) -> Tuple[np.ndarray, Dict[str, np.ndarray], object]:
    """Score, then pull back the score gradient returned by ``loss_grad(scores)``.

    ``loss_grad`` returns ``(upstream, extra)``; ``extra`` is handed back unchanged
    so callers can carry loss values through one forward pass.
    """
    scores, trace = _forward(params, features)
    upstream, extra = loss_grad(scores)
    return scores, _backward(params, trace, upstream, scores.shape[0]), extra


def _backward(params: ModelParams, trace: _Trace, upstream, n: int) -> Dict[str, np.ndarray]:
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (n,):
        raise ValueError(f"upstream gradient must have shape ({n},), got {upstream.shape}")
    T = params.tensors
    H = params.n_heads
    dh = params.d_model // H
    scale = 1.0 / np.sqrt(dh)
    grads = {name: np.zeros_like(t) for name, t in T.items()}

    dy = upstream[:, None]
    grads["out.W"] = trace.z.T @ dy
    grads["out.b"] = dy.sum(axis=0)
    dz = dy @ T["out.W"].T
    dh_, grads["final_ln.g"], grads["final_ln.b"] = _layer_norm_backward(dz, trace.final_ln)

    for layer in reversed(range(params.n_layers)):
        p = f"block{layer}."
        cache = trace.blocks[layer]
        # feed-forward sub-layer: h_out = h_mid + gelu(c W1 + b1) W2 + b2
        grads[p + "ff.W2"] = cache["gu"].T @ dh_
        grads[p + "ff.b2"] = dh_.sum(axis=0)
        du = (dh_ @ T[p + "ff.W2"].T) * _gelu_grad(cache["u"], cache["t"])
        grads[p + "ff.W1"] = cache["c"].T @ du
        grads[p + "ff.b1"] = du.sum(axis=0)
        dc = du @ T[p + "ff.W1"].T
        dx, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layer_norm_backward(dc, cache["ln2"])
        dh_ = dh_ + dx
        if params.isolated:
            continue
        # attention sub-layer: h_mid = h_in + attn(ln1(h_in))
        grads[p + "attn.Wo"] = cache["o"].T @ dh_
        grads[p + "attn.bo"] = dh_.sum(axis=0)
        do = (dh_ @ T[p + "attn.Wo"].T).reshape(n, H, dh).transpose(1, 0, 2)
        P, q, k, v = cache["P"], cache["q"], cache["k"], cache["v"]
        dP = do @ v.transpose(0, 2, 1)
        dv = P.transpose(0, 2, 1) @ do
        rowdot = (dP * P).sum(axis=-1, keepdims=True)
        dP -= rowdot
        dP *= P
        dq = (dP @ k) * scale
        dk = dP.transpose(0, 2, 1) @ (q * scale)
        a = cache["a"]
        da = np.zeros_like(a)
        for name, d_ in (("q", dq), ("k", dk), ("v", dv)):
            d2 = d_.transpose(1, 0, 2).reshape(n, -1)
            grads[p + f"attn.W{name}"] = a.T @ d2
            grads[p + f"attn.b{name}"] = d2.sum(axis=0)
            da += d2 @ T[p + f"attn.W{name}"].T
        dx, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layer_norm_backward(da, cache["ln1"])
        dh_ = dh_ + dx

    grads["in.W"] = trace.x.T @ dh_
    grads["in.b"] = dh_.sum(axis=0)
    return grads


# --- checkpoint file --------------------------------------------------------


def save_checkpoint(params: ModelParams, path) -> None:
    """Write an ASCII header line followed by float64 little-endian values in declared order."""
    header = (
        f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION} d_model={params.d_model} layers={params.n_layers} "
        f"heads={params.n_heads} isolated={int(params.isolated)} n_params={params.n_params}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(params.flat().astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing checkpoint header")
    fields = raw[:newline].decode("ascii", errors="replace").split()
    if len(fields) < 2 or fields[0] != CHECKPOINT_MAGIC or fields[1] != f"v{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: not an EMER checkpoint (header {raw[:newline][:60]!r})")
    try:
        meta = dict(f.split("=", 1) for f in fields[2:])
        d_model, n_layers, n_heads = int(meta["d_model"]), int(meta["layers"]), int(meta["heads"])
        isolated = bool(int(meta["isolated"]))
        declared = int(meta["n_params"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed checkpoint header: {exc}") from None
    expected = param_count(d_model, n_layers)
    if declared != expected:
        raise ValueError(f"{path}: header declares {declared} parameters, architecture has {expected}")
    body = raw[newline + 1 :]
    if len(body) != 8 * expected:
        raise ValueError(f"{path}: expected {expected} parameters, file holds {len(body) / 8:g}")
    template = init(0, d_model, n_layers, n_heads, isolated=isolated)
    return template.with_flat(np.frombuffer(body, dtype="<f8"))
