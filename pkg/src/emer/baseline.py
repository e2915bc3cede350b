"""Multiplicative fusion-formula baseline and its grid-search tuner.

``score = prod_k (pxtr_k + bias_k) ** exponent_k``. The tuner stands in for
manual online tuning: coordinate-wise ascent over a small (bias, exponent)
grid per objective, maximizing mean per-objective GAUC on a validation log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from emer.domain import N_OBJECTIVES, OBJECTIVES, Candidate, Request
from emer.evalsuite import concordance_counts, gauc

DEFAULT_BIASES = (0.001, 0.01, 0.1)
DEFAULT_EXPONENTS = (0.0, 0.5, 1.0, 2.0)
DEFAULT_SWEEPS = 2


@dataclass(frozen=True)
class FusionParams:
    bias: Tuple[float, ...]
    exponent: Tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(x) for x in self.bias)
        e = tuple(float(x) for x in self.exponent)
        if len(b) != N_OBJECTIVES or len(e) != N_OBJECTIVES:
            raise ValueError("need one bias and one exponent per objective")
        if any(not x > 0 for x in b):
            raise ValueError(f"biases must be > 0, got {b}")
        if any(not x >= 0 for x in e):
            raise ValueError(f"exponents must be >= 0, got {e}")
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "exponent", e)

    @classmethod
    def neutral(cls, bias: float = 0.01) -> "FusionParams":
        return cls((bias,) * N_OBJECTIVES, (1.0,) * N_OBJECTIVES)

    def replace(self, k: int, bias: float, exponent: float) -> "FusionParams":
        b, e = list(self.bias), list(self.exponent)
        b[k], e[k] = bias, exponent
        return FusionParams(tuple(b), tuple(e))


def log_fusion_scores(params: FusionParams, pxtrs: np.ndarray) -> np.ndarray:
    """Log of the fusion score per row of an ``(n, 8)`` pxtr matrix (same ranking, no overflow)."""
    pxtrs = np.asarray(pxtrs, dtype=np.float64)
    return np.log(pxtrs + np.asarray(params.bias)) @ np.asarray(params.exponent)


def fusion_scores(params: FusionParams, pxtrs: np.ndarray) -> np.ndarray:
    return np.exp(log_fusion_scores(params, pxtrs))


def fusion_score(params: FusionParams, candidate: Candidate) -> float:
    return float(fusion_scores(params, candidate.pxtr_vector()[None, :])[0])


def scorer(params: FusionParams):
    return lambda request: log_fusion_scores(params, request.pxtrs)


@dataclass
class GridSpec:
    biases: Sequence[float] = DEFAULT_BIASES
    exponents: Sequence[float] = DEFAULT_EXPONENTS
    sweeps: int = DEFAULT_SWEEPS
    start: FusionParams = field(default_factory=FusionParams.neutral)


def mean_gauc_of_scores(requests: Sequence[Request], log_scores: Sequence[np.ndarray]) -> float:
    """Mean over objectives of the per-user GAUC of the given score vectors."""
    per_user: Dict[str, list] = {}
    for req, s in zip(requests, log_scores):
        if req.n < 2:
            continue
        slot = per_user.setdefault(req.user_id, [0, np.zeros(N_OBJECTIVES), np.zeros(N_OBJECTIVES)])
        slot[0] += req.n
        for k in range(N_OBJECTIVES):
            c, valid = concordance_counts(s, req.pxtrs[:, k])
            slot[1][k] += c * valid
            slot[2][k] += valid
    if not per_user:
        raise ValueError("validation log has no request with two or more candidates")
    vals = []
    for k in range(N_OBJECTIVES):
        vals.append(gauc([(imp, num[k] / den[k] if den[k] else 0.5) for imp, num, den in per_user.values()]))
    return float(np.mean(vals))


def tune(requests: Sequence[Request], grid: Optional[GridSpec] = None) -> Tuple[FusionParams, List[dict]]:
    """Coordinate-wise grid ascent; returns the params and a history of accepted moves.

    Candidates are tried in grid order and only a strict improvement replaces
    the incumbent, so the result is deterministic given the log.
    """
    requests = list(requests)
    if not requests:
        raise ValueError("cannot tune on an empty log")
    grid = grid or GridSpec()
    # log(pxtr + bias) columns are reused across every grid evaluation
    logs = {b: [np.log(r.pxtrs + b) for r in requests] for b in grid.biases}
    start = grid.start
    for b in start.bias:
        if b not in logs:
            logs[b] = [np.log(r.pxtrs + b) for r in requests]

    def contributions(p: FusionParams) -> List[np.ndarray]:
        return [
            np.stack([logs[p.bias[k]][i][:, k] * p.exponent[k] for k in range(N_OBJECTIVES)], axis=1)
            for i in range(len(requests))
        ]

    best = start
    parts = contributions(best)
    best_value = mean_gauc_of_scores(requests, [c.sum(axis=1) for c in parts])
    history = [{"sweep": 0, "objective": "", "bias": "", "exponent": "", "mean_gauc": best_value}]
    for sweep in range(1, grid.sweeps + 1):
        for k, obj in enumerate(OBJECTIVES):
            rest = [c.sum(axis=1) - c[:, k] for c in parts]
            for b in grid.biases:
                for e in grid.exponents:
                    if (b, e) == (best.bias[k], best.exponent[k]):
                        continue
                    scores = [rest[i] + e * logs[b][i][:, k] for i in range(len(requests))]
                    value = mean_gauc_of_scores(requests, scores)
                    if value > best_value:
                        best_value, best = value, best.replace(k, b, e)
                        for i in range(len(requests)):
                            parts[i][:, k] = e * logs[b][i][:, k]
                        history.append(
                            {"sweep": sweep, "objective": obj, "bias": b, "exponent": e, "mean_gauc": value}
                        )
    return best, history


def save_params(params: FusionParams, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, o in enumerate(OBJECTIVES):
            fh.write(f"{o}.bias = {params.bias[k]!r}\n")
            fh.write(f"{o}.exponent = {params.exponent[k]!r}\n")


def load_params(path) -> FusionParams:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"fusion params not found: {path}")
    values: Dict[str, float] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        obj, _, attr = key.partition(".")
        if obj not in OBJECTIVES or attr not in ("bias", "exponent"):
            raise ValueError(f"{path}:{line_no}: unknown key {key!r}")
        try:
            values[key] = float(raw)
        except ValueError:
            raise ValueError(f"{path}:{line_no}: {key} is not a number: {raw!r}") from None
    missing = [f"{o}.{a}" for o in OBJECTIVES for a in ("bias", "exponent") if f"{o}.{a}" not in values]
    if missing:
        raise ValueError(f"{path}: missing keys {missing}")
    return FusionParams(
        tuple(values[f"{o}.bias"] for o in OBJECTIVES), tuple(values[f"{o}.exponent"] for o in OBJECTIVES)
    )
