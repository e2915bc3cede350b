"""Self-evolving loss weights.

Each objective's prior-loss weight for a request is the ratio of a top-K
rank metric under the lagged snapshot to the same metric under the current
parameters. An objective the current model has regressed on gets a weight
above 1, one it has improved on gets a weight below 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from emer import ranknet
from emer.domain import N_OBJECTIVES, OBJECTIVES, Request
from emer.evalsuite import iput_matrix
from emer.features import encode, zero_ranks

W_MIN = 0.1
W_MAX = 10.0
RATIO_EPS = 1e-8
METRIC_KINDS = ("hitrate", "mean", "dcg")
DEFAULT_METRIC = "dcg"
DEFAULT_K = 6


def parse_metric_kind(kind: str) -> str:
    """Accept ``dcg``, ``DCG@K``, ``HitRate@K``, ``MEAN@K`` and similar spellings."""
    key = kind.strip().lower().split("@", 1)[0]
    if key not in METRIC_KINDS:
        raise ValueError(f"unknown rank metric {kind!r}; expected one of {METRIC_KINDS}")
    return key


@dataclass(frozen=True)
class ObjectiveWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if w.shape != (N_OBJECTIVES,) or np.any(~(w > 0)):
            raise ValueError(f"weights must be 8 strictly positive values, got {w}")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @classmethod
    def ones(cls) -> "ObjectiveWeights":
        return cls(np.ones(N_OBJECTIVES))

    def as_array(self) -> np.ndarray:
        return self.w

    def as_dict(self) -> Dict[str, float]:
        return {o: float(self.w[k]) for k, o in enumerate(OBJECTIVES)}

    def __getitem__(self, objective: str) -> float:
        return float(self.w[OBJECTIVES.index(objective)])


def _top_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, ties broken by index ascending."""
    order = np.lexsort((np.arange(values.size), -values))
    return order[:k]


def rank_metric(kind: str, scores, pxtr_values, k: int) -> float:
    """HitRate@K, MEAN@K or DCG@K of the score ranking against one objective's values."""
    kind = parse_metric_kind(kind)
    scores = np.asarray(scores, dtype=np.float64)
    values = np.asarray(pxtr_values, dtype=np.float64)
    if scores.shape != values.shape or scores.ndim != 1:
        raise ValueError("scores and pxtr values must be aligned 1-d vectors")
    if not 1 <= k <= scores.size:
        raise ValueError(f"K={k} must be in [1, n={scores.size}]")
    top = _top_k(scores, k)
    if kind == "hitrate":
        return np.intersect1d(top, _top_k(values, k)).size / k
    gains = values[top]
    if kind == "mean":
        return float(gains.mean())
    return float((gains / np.log2(np.arange(2, k + 2))).sum())


def advantage_evaluator(metric_prev: float, metric_curr: float, w_min: float = W_MIN, w_max: float = W_MAX) -> float:
    """Clamped ratio ``metric_prev / metric_curr``; exactly 1 when the metrics agree.

    Two metrics both below ``RATIO_EPS`` count as equal, which keeps the
    weight non-increasing in ``metric_curr`` across the epsilon guard.
    """
    if metric_prev < 0 or metric_curr < 0:
        raise ValueError("rank metrics must be non-negative")
    if metric_prev == metric_curr or max(metric_prev, metric_curr) < RATIO_EPS:
        return 1.0
    return float(min(w_max, max(w_min, metric_prev / max(metric_curr, RATIO_EPS))))


def weights_from_scores(
    request: Request,
    current_scores,
    previous_scores,
    kind: str = DEFAULT_METRIC,
    k: int = DEFAULT_K,
    use_iput: bool = True,
) -> ObjectiveWeights:
    refs = iput_matrix(request.pxtrs) if use_iput else request.pxtrs
    k = min(k, request.n)
    w = np.empty(N_OBJECTIVES)
    for j in range(N_OBJECTIVES):
        w[j] = advantage_evaluator(
            rank_metric(kind, previous_scores, refs[:, j], k), rank_metric(kind, current_scores, refs[:, j], k)
        )
    return ObjectiveWeights(w)


def score_request(params: ranknet.ModelParams, request: Request) -> np.ndarray:
    x = encode(request)
    return ranknet.forward(params, zero_ranks(x) if params.isolated else x)


def compute_weights(
    request: Request,
    current: ranknet.ModelParams,
    previous: ranknet.ModelParams,
    kind: str = DEFAULT_METRIC,
    k: int = DEFAULT_K,
    use_iput: bool = True,
) -> ObjectiveWeights:
    """Per-request objective weights from scoring the request under both parameter sets."""
    return weights_from_scores(
        request, score_request(current, request), score_request(previous, request), kind, k, use_iput
    )


class SnapshotPolicy:
    """Keeps a lagged copy of the parameters, refreshed every ``interval_steps`` updates."""

    def __init__(self, params: ranknet.ModelParams, interval_steps: int = 100):
        if interval_steps <= 0:
            raise ValueError("interval_steps must be positive")
        self.interval_steps = interval_steps
        self.previous_params = params.copy()
        self.snapshot_step = 0

    def lag(self, step: int) -> int:
        return step - self.snapshot_step

    def after_update(self, step: int, params: ranknet.ModelParams) -> bool:
        """Call with the count of completed updates; snapshots when the interval elapses."""
        if self.lag(step) >= self.interval_steps:
            self.previous_params = params.copy()
            self.snapshot_step = step
            return True
        return False

    def check(self, step: int) -> None:
        if not 0 <= self.lag(step) <= self.interval_steps:
            raise AssertionError(f"snapshot lag {self.lag(step)} exceeds {self.interval_steps}")
