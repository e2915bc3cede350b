"""Online training loop: one request per Adam step, self-evolving weights, ablation switches."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from emer import ranknet
from emer.domain import N_OBJECTIVES, OBJECTIVES, Request
from emer.evolve import DEFAULT_K, DEFAULT_METRIC, ObjectiveWeights, SnapshotPolicy, parse_metric_kind, weights_from_scores
from emer.losses import DEFAULT_MAX_PAIRS, LossConfig, build_request_pairs, loss_from_scores, request_features
from emer.synthlog import iter_log

VARIANTS = ("full", "nocomp", "nopost", "noprior", "noevolve", "noiput")
PRODUCTION_LEARNING_RATE = 5e-6  # production value, paired with ~1e10 samples/day
TRACE_HEADER = ["step", "total", "posterior"] + [f"l_{o}" for o in OBJECTIVES] + [f"w_{o}" for o in OBJECTIVES]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 0  # 0 -> one pass over the log (times epochs)
    epochs: int = 1
    snapshot_interval: int = 100
    max_pairs: int = DEFAULT_MAX_PAIRS
    metric_kind: str = DEFAULT_METRIC
    k: int = DEFAULT_K
    variant: str = "full"
    seed: int = 0
    d_model: int = 32
    layers: int = 2
    heads: int = 4

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("snapshot_interval", "max_pairs", "k", "epochs"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        parse_metric_kind(self.metric_kind)


@dataclass(frozen=True)
class PipelineSwitches:
    isolated: bool = False
    use_posterior: bool = True
    use_prior: bool = True
    evolve: bool = True
    use_iput: bool = True

    def loss_config(self, max_pairs: int) -> LossConfig:
        return LossConfig(
            max_pairs_posterior=max_pairs,
            max_pairs_prior=max_pairs,
            use_iput=self.use_iput,
            use_posterior=self.use_posterior,
            use_prior=self.use_prior,
            isolated=self.isolated,
        )


def apply_variant(variant: str, switches: Optional[PipelineSwitches] = None) -> PipelineSwitches:
    """Turn off the component an ablation variant removes."""
    base = switches or PipelineSwitches()
    changes = {
        "full": {},
        "nocomp": {"isolated": True},
        "nopost": {"use_posterior": False},
        "noprior": {"use_prior": False},
        "noevolve": {"evolve": False},
        "noiput": {"use_iput": False},
    }
    if variant not in changes:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return replace(base, **changes[variant])


class Adam:
    def __init__(self, params: ranknet.ModelParams, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: ranknet.ModelParams, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.tensors.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: ranknet.ModelParams
    trace: List[dict] = field(default_factory=list)
    initial_params: Optional[ranknet.ModelParams] = None

    def per_objective_losses(self, last: Optional[int] = None) -> np.ndarray:
        rows = self.trace[-last:] if last else self.trace
        return np.array([[r[f"l_{o}"] for o in OBJECTIVES] for r in rows])


class NonFiniteLoss(FloatingPointError):
    pass


def _requests(source) -> Iterable[Request]:
    if isinstance(source, (str, Path)):
        return iter_log(source)
    return source


def train(config: TrainConfig, data: Union[str, Path, Sequence[Request]]) -> TrainResult:
    """Train the scorer on a log path or an in-memory request sequence.

    Requests are consumed in log order; ``config.steps`` caps the number of
    updates (0 means ``epochs`` full passes).
    """
    switches = apply_variant(config.variant)
    loss_cfg = switches.loss_config(config.max_pairs)
    params = ranknet.init(config.seed, config.d_model, config.layers, config.heads, isolated=switches.isolated)
    result = TrainResult(params=params, initial_params=params.copy())
    requests = data if not isinstance(data, (str, Path)) else list(iter_log(data))
    if not isinstance(requests, list):
        requests = list(requests)
    total_steps = config.steps if config.steps else config.epochs * len(requests)
    if total_steps == 0 or not requests:
        return result

    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    snap = SnapshotPolicy(params, config.snapshot_interval)
    ones = ObjectiveWeights.ones()
    for step in range(total_steps):
        req = requests[step % len(requests)]
        rng = np.random.default_rng([config.seed, step])
        pairs = build_request_pairs(req, loss_cfg, rng)
        x = request_features(req, loss_cfg)
        prev_scores = ranknet.forward(snap.previous_params, x) if switches.evolve else None

        def pull(scores):
            if switches.evolve:
                w = weights_from_scores(req, scores, prev_scores, config.metric_kind, config.k, switches.use_iput)
            else:
                w = ones
            breakdown, g = loss_from_scores(scores, pairs, w, loss_cfg)
            return g, (breakdown, w)

        _, grads, (breakdown, w) = ranknet.forward_backward(params, x, pull)
        if not math.isfinite(breakdown.total):
            raise NonFiniteLoss(f"non-finite loss at step {step} on request {req.request_id}")
        opt.step(params, grads)
        snap.after_update(step + 1, params)
        snap.check(step + 1)

        row = {"step": step, "total": breakdown.total, "posterior": breakdown.posterior_loss}
        row.update({f"l_{o}": breakdown.per_objective_loss[o] for o in OBJECTIVES})
        row.update({f"w_{o}": float(w.w[k]) for k, o in enumerate(OBJECTIVES)})
        result.trace.append(row)
    return result


def write_trace(trace: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in trace:
            w.writerow([row["step"]] + [repr(float(row[h])) for h in TRACE_HEADER[1:]])


def read_trace(path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in reader]


# --- flat key = value config file -------------------------------------------

def parse_config_text(text: str, source: str = "<config>") -> Dict[str, object]:
    out: Dict[str, object] = {}
    defaults = asdict(TrainConfig())
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{line_no}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "adam_betas":
            parts = [p.strip() for p in raw.strip("()").split(",")]
            if len(parts) != 2:
                raise ValueError(f"{source}:{line_no}: adam_betas needs two values")
            out["beta1"], out["beta2"] = float(parts[0]), float(parts[1])
            continue
        if key not in defaults:
            raise ValueError(f"{source}:{line_no}: unknown config key {key!r}")
        kind = type(defaults[key])
        try:
            out[key] = kind(raw) if kind is not int else int(raw)
        except ValueError:
            raise ValueError(f"{source}:{line_no}: bad value for {key}: {raw!r}") from None
    return out


def load_config(path, **overrides) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def config_text(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())
