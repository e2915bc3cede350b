"""Pairwise supervision: posterior relative-advantage pairs and per-objective prior pairs.

Both terms use the pairwise logistic loss ``-log sigmoid(s_winner - s_loser)``
averaged over the pairs of one batch. The prior term is the weighted mean
of the eight per-objective losses; the posterior term is unweighted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from emer import ranknet
from emer.domain import N_OBJECTIVES, OBJECTIVES, Request
from emer.evalsuite import objective_values
from emer.features import encode, zero_ranks

DEFAULT_MAX_PAIRS = 256
_ENUMERATE_LIMIT = 4096


@dataclass(frozen=True)
class PairBatch:
    """Oriented pairs within one request: ``winners[p]`` should outscore ``losers[p]``."""

    winners: np.ndarray
    losers: np.ndarray
    objective: Optional[str] = None

    def __post_init__(self):
        w = np.asarray(self.winners, dtype=np.int64).reshape(-1)
        l = np.asarray(self.losers, dtype=np.int64).reshape(-1)
        if w.shape != l.shape:
            raise ValueError("winners and losers must have equal length")
        if np.any(w == l):
            raise ValueError("a pair must join two distinct candidates")
        object.__setattr__(self, "winners", w)
        object.__setattr__(self, "losers", l)

    def __len__(self) -> int:
        return int(self.winners.size)

    def pairs(self):
        return list(zip(self.winners.tolist(), self.losers.tolist()))

    @classmethod
    def empty(cls, objective: Optional[str] = None) -> "PairBatch":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), objective)


@dataclass
class LossConfig:
    max_pairs_posterior: int = DEFAULT_MAX_PAIRS
    max_pairs_prior: int = DEFAULT_MAX_PAIRS
    use_iput: bool = True
    use_posterior: bool = True
    use_prior: bool = True
    isolated: bool = False  # zero the normalized-rank features


@dataclass
class LossBreakdown:
    posterior_loss: float
    per_objective_loss: Dict[str, float]
    prior_loss: float
    total: float


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


@lru_cache(maxsize=16)
def _triu(n: int) -> Tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(n, k=1)
    i.flags.writeable = False
    j.flags.writeable = False
    return i, j


def _orient(values, i, j, objective):
    flip = values[j] > values[i]
    return PairBatch(np.where(flip, j, i), np.where(flip, i, j), objective)


def sample_strict_pairs(values, max_pairs: int, rng, objective: Optional[str] = None) -> PairBatch:
    """Uniform sample without replacement of pairs with strictly different values.

    Small candidate sets enumerate every unordered pair; large ones draw
    random ordered pairs and keep first occurrences of valid unordered pairs,
    which is the same distribution without materialising ~n^2/2 pairs.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if max_pairs <= 0:
        raise ValueError("max_pairs must be positive")
    if n < 2:
        return PairBatch.empty(objective)
    rng = _rng(rng)
    total = n * (n - 1) // 2
    if total > _ENUMERATE_LIMIT and total > 8 * max_pairs:
        keys = np.empty(0, dtype=np.int64)
        for _ in range(8):
            a = rng.integers(0, n, size=2 * max_pairs)
            b = rng.integers(0, n, size=2 * max_pairs)
            ok = values[a] != values[b]
            lo, hi = np.minimum(a, b)[ok], np.maximum(a, b)[ok]
            keys = np.concatenate([keys, lo * n + hi])
            _, first = np.unique(keys, return_index=True)
            keys = keys[np.sort(first)]
            if keys.size >= max_pairs:
                keys = keys[:max_pairs]
                return _orient(values, keys // n, keys % n, objective)
        # heavy ties: fall through to exact enumeration
    i, j = _triu(n)
    valid = np.flatnonzero(values[i] != values[j])
    if valid.size > max_pairs:
        valid = np.sort(rng.choice(valid, size=max_pairs, replace=False))
    return _orient(values, i[valid], j[valid], objective)


def build_posterior_pairs(request: Request, max_pairs: int = DEFAULT_MAX_PAIRS, rng=0) -> PairBatch:
    """All exposed pairs with a strictly higher satisfaction level for the winner."""
    exposed = request.exposed_indices
    if exposed.size < 2:
        return PairBatch.empty()
    levels = request.levels()[exposed]
    wi, li = np.nonzero(levels[:, None] > levels[None, :])
    if wi.size == 0:
        return PairBatch.empty()
    if wi.size > max_pairs:
        keep = np.sort(_rng(rng).choice(wi.size, size=max_pairs, replace=False))
        wi, li = wi[keep], li[keep]
    return PairBatch(exposed[wi], exposed[li])


def build_prior_pairs(
    request: Request, objective: str, max_pairs: int = DEFAULT_MAX_PAIRS, use_iput: bool = True, rng=0
) -> PairBatch:
    """Pairs over all candidates ordered by one objective (IPUT form for interactions)."""
    return sample_strict_pairs(objective_values(request, objective, use_iput), max_pairs, rng, objective)


def pairwise_logistic_loss(scores, batch: PairBatch) -> Tuple[float, np.ndarray]:
    """Mean of ``log(1 + exp(-(s_i - s_j)))`` over the batch, and its score gradient."""
    scores = np.asarray(scores, dtype=np.float64)
    grad = np.zeros_like(scores)
    m = len(batch)
    if m == 0:
        return 0.0, grad
    diff = scores[batch.winners] - scores[batch.losers]
    loss = float(np.logaddexp(0.0, -diff).mean())
    # d/d diff of log(1 + e^-diff) = -sigmoid(-diff)
    g = -0.5 * (1.0 - np.tanh(0.5 * diff)) / m
    np.add.at(grad, batch.winners, g)
    np.add.at(grad, batch.losers, -g)
    return loss, grad


def validate_weights(weights) -> np.ndarray:
    if hasattr(weights, "as_array"):
        w = weights.as_array()
    elif isinstance(weights, Mapping):
        w = np.array([weights[o] for o in OBJECTIVES], dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
    if w.shape != (N_OBJECTIVES,):
        raise ValueError(f"need one weight per objective, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError(f"objective weights must be strictly positive, got {w}")
    return w


@dataclass
class RequestPairs:
    posterior: PairBatch
    prior: Dict[str, PairBatch] = field(default_factory=dict)


def build_request_pairs(request: Request, cfg: LossConfig, rng) -> RequestPairs:
    rng = _rng(rng)
    post = build_posterior_pairs(request, cfg.max_pairs_posterior, rng)
    prior = {o: build_prior_pairs(request, o, cfg.max_pairs_prior, cfg.use_iput, rng) for o in OBJECTIVES}
    return RequestPairs(post, prior)


def loss_from_scores(scores, pairs: RequestPairs, weights, cfg: LossConfig) -> Tuple[LossBreakdown, np.ndarray]:
    """Loss breakdown and its gradient with respect to the scores.

    Per-objective losses are always reported; they only enter the total
    when the prior term is enabled.
    """
    w = validate_weights(weights)
    post_loss, post_grad = pairwise_logistic_loss(scores, pairs.posterior)
    per_obj, grad = {}, np.zeros_like(np.asarray(scores, dtype=np.float64))
    prior = 0.0
    for k, o in enumerate(OBJECTIVES):
        value, g = pairwise_logistic_loss(scores, pairs.prior[o])
        per_obj[o] = value
        if cfg.use_prior:
            prior += w[k] * value / N_OBJECTIVES
            grad += (w[k] / N_OBJECTIVES) * g
    if cfg.use_posterior:
        grad += post_grad
    else:
        post_loss = 0.0
    if not cfg.use_prior:
        prior = 0.0
    return LossBreakdown(post_loss, per_obj, prior, post_loss + prior), grad


def request_features(request: Request, cfg: LossConfig) -> np.ndarray:
    x = encode(request)
    return zero_ranks(x) if cfg.isolated else x


def total_loss(
    params: ranknet.ModelParams, request: Request, weights, config: Optional[LossConfig] = None, rng=0
) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
    """Posterior + weighted prior loss for one request and its parameter gradients."""
    cfg = config or LossConfig()
    validate_weights(weights)
    pairs = build_request_pairs(request, cfg, rng)
    x = request_features(request, cfg)

    def pull(scores):
        breakdown, g = loss_from_scores(scores, pairs, weights, cfg)
        return g, breakdown

    _, grads, breakdown = ranknet.forward_backward(params, x, pull)
    return breakdown, grads
