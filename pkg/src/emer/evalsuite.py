"""Offline evaluation: concordance/GAUC tables, the IPUT transform and session replay."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import kendalltau

from emer.domain import (
    INTERACTION_INDICES,
    INTERACTION_OBJECTIVES,
    OBJECTIVES,
    PVTR_INDEX,
    Request,
    objective_index,
)

IPUT_MIN_WATCH_S = 0.5
DEFAULT_BUDGET_S = 30.0


class _Counter:
    def __init__(self):
        self.value = 0

    def reset(self):
        self.value = 0


iput_clamp_counter = _Counter()


def iput_transform(pxtr, p_watchtime, min_watch_s: float = IPUT_MIN_WATCH_S):
    """Interaction probability per second of predicted watch time.

    Watch times below ``min_watch_s`` are clamped up to it and counted in
    :data:`iput_clamp_counter`. Works elementwise on arrays.
    """
    watch = np.asarray(p_watchtime, dtype=np.float64)
    low = watch < min_watch_s
    if np.any(low):
        iput_clamp_counter.value += int(np.count_nonzero(low))
        watch = np.where(low, min_watch_s, watch)
    out = np.asarray(pxtr, dtype=np.float64) / watch
    return float(out) if out.ndim == 0 else out


def objective_values(request: Request, objective: str, use_iput: bool = False) -> np.ndarray:
    """Reference values for one objective; interaction objectives become IPUT when asked."""
    values = request.pxtrs[:, objective_index(objective)]
    if use_iput and objective in INTERACTION_OBJECTIVES:
        return iput_transform(values, request.pxtrs[:, PVTR_INDEX])
    return values


def iput_matrix(pxtrs: np.ndarray) -> np.ndarray:
    """``(n, 8)`` reference matrix with the interaction columns IPUT-transformed."""
    out = np.array(pxtrs, dtype=np.float64, copy=True)
    idx = list(INTERACTION_INDICES)
    out[:, idx] = iput_transform(out[:, idx], out[:, [PVTR_INDEX]])
    return out


# --- concordance ------------------------------------------------------------


def _tie_pairs(x: np.ndarray) -> int:
    _, counts = np.unique(x, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def concordance_counts(scores, reference) -> Tuple[float, int]:
    """``(concordance, n_valid_pairs)`` over pairs with distinct reference values.

    Concordant pairs count 1, score ties 0.5, discordant 0. Uses the
    O(n log n) Kendall statistic: with ``P - Q = tau_b * sqrt((n0 - n1)(n0 - n2))``
    the concordance is ``0.5 + (P - Q) / (2 * valid)`` where ``valid = n0 - n2``.
    """
    s = np.asarray(scores, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if s.shape != r.shape or s.ndim != 1:
        raise ValueError("scores and reference must be aligned 1-d vectors")
    if s.size < 2:
        raise ValueError("need at least two items")
    n0 = s.size * (s.size - 1) // 2
    valid = n0 - _tie_pairs(r)
    if valid == 0:
        return 0.5, 0
    score_untied = n0 - _tie_pairs(s)
    if score_untied == 0:
        return 0.5, valid
    tau = kendalltau(s, r, variant="b").statistic
    # P - Q is an integer count; rounding strips the float error from tau
    p_minus_q = round(tau * math.sqrt(score_untied * valid))
    c = 0.5 + p_minus_q / (2.0 * valid)
    return min(1.0, max(0.0, c)), valid


def pairwise_auc(ranking_scores, reference_values) -> float:
    """Concordance index of a ranking against reference values (0.5 if no valid pair)."""
    return concordance_counts(ranking_scores, reference_values)[0]


def gauc(per_user: Sequence[Tuple[float, float]]) -> float:
    """Impression-weighted mean of per-user AUC from ``(impressions, auc)`` pairs."""
    if len(per_user) == 0:
        raise ValueError("gauc needs at least one user")
    imp = np.array([p[0] for p in per_user], dtype=np.float64)
    auc = np.array([p[1] for p in per_user], dtype=np.float64)
    if np.any(imp <= 0):
        raise ValueError("impressions must be positive")
    return float((imp * auc).sum() / imp.sum())


# --- session replay ---------------------------------------------------------


def session_replay(candidates: Sequence[Tuple[float, float]], ordering: Sequence[int], budget_s: float) -> float:
    """Expected interactions from items fully watched within ``budget_s``.

    ``candidates`` are ``(p_watchtime, p_interaction)`` pairs, ``ordering`` the
    display order as candidate indices. The walk stops at the first item
    that does not fit in the remaining budget.
    """
    if not budget_s > 0:
        raise ValueError("budget_s must be positive")
    remaining = float(budget_s)
    total = 0.0
    for idx in ordering:
        watch, p = candidates[idx]
        if watch > remaining:
            break
        remaining -= watch
        total += p
    return total


def order_by(values: Sequence[float]) -> List[int]:
    """Indices sorted by value descending, ties by index ascending."""
    values = np.asarray(values, dtype=np.float64)
    return np.lexsort((np.arange(values.size), -values)).tolist()


def best_replay_order(candidates: Sequence[Tuple[float, float]], budget_s: float) -> Tuple[float, Tuple[int, ...]]:
    """Brute-force maximum of :func:`session_replay` over all orderings."""
    best = (-math.inf, ())
    for perm in permutations(range(len(candidates))):
        v = session_replay(candidates, perm, budget_s)
        if v > best[0]:
            best = (v, perm)
    return best


# --- evaluation report ------------------------------------------------------

Scorer = Callable[[Request], np.ndarray]


@dataclass
class EvalReport:
    per_objective_gauc: Dict[str, float]
    per_objective_gauc_iput: Dict[str, float]
    replay_expected_interactions: float
    metadata: Dict[str, str] = field(default_factory=dict)
    replay_per_request: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for v in list(self.per_objective_gauc.values()) + list(self.per_objective_gauc_iput.values()):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"GAUC out of [0, 1]: {v}")

    def mean_gauc(self) -> float:
        return float(np.mean([self.per_objective_gauc[o] for o in OBJECTIVES]))

    def mean_consistent_gauc(self) -> float:
        """Mean over the 8 objectives with interaction objectives in IPUT form."""
        vals = [
            self.per_objective_gauc_iput[o] if o in INTERACTION_OBJECTIVES else self.per_objective_gauc[o]
            for o in OBJECTIVES
        ]
        return float(np.mean(vals))

    def rows(self) -> List[Tuple[str, str, float]]:
        out = [(o, "gauc", self.per_objective_gauc[o]) for o in OBJECTIVES]
        out += [(o, "gauc_iput", self.per_objective_gauc_iput[o]) for o in INTERACTION_OBJECTIVES]
        out.append(("all", "mean_gauc", self.mean_gauc()))
        out.append(("all", "mean_consistent_gauc", self.mean_consistent_gauc()))
        out.append(("all", "replay_expected_interactions", self.replay_expected_interactions))
        return out


def slate_candidates(request: Request, indices: Sequence[int]) -> List[Tuple[float, float]]:
    """``(pvtr, summed interaction pxtrs)`` for the given candidate rows."""
    px = request.pxtrs
    inter = px[:, list(INTERACTION_INDICES)].sum(axis=1)
    return [(float(px[i, PVTR_INDEX]), float(inter[i])) for i in indices]


def replay_request(request: Request, scores: np.ndarray, budget_s: float) -> float:
    """Replay the logged exposed slate re-ordered by the model's scores."""
    exposed = request.exposed_indices
    if exposed.size == 0:
        return 0.0
    slate = slate_candidates(request, exposed)
    return session_replay(slate, order_by(np.asarray(scores)[exposed]), budget_s)


def evaluate(
    scorer: Scorer,
    requests: Iterable[Request],
    budget_s: float = DEFAULT_BUDGET_S,
    metadata: Optional[Mapping[str, str]] = None,
) -> EvalReport:
    """Score every request and aggregate per-user concordance into GAUC.

    A user's AUC pools the within-request pairs of all their requests; the
    user's impression weight is their total candidate count.
    """
    # per user: [impressions, weighted-concordance sums (12), valid-pair sums (12)]
    acc: Dict[str, list] = defaultdict(lambda: [0, np.zeros(12), np.zeros(12)])
    replay: Dict[str, float] = {}
    for req in requests:
        try:
            scores = np.asarray(scorer(req), dtype=np.float64)
            if scores.shape != (req.n,):
                raise ValueError(f"scorer returned shape {scores.shape}, expected ({req.n},)")
            if req.n < 2:
                replay[req.request_id] = replay_request(req, scores, budget_s)
                continue
            refs = iput_matrix(req.pxtrs)
            slot = acc[req.user_id]
            slot[0] += req.n
            for k in range(8):
                c, valid = concordance_counts(scores, req.pxtrs[:, k])
                slot[1][k] += c * valid
                slot[2][k] += valid
            for j, k in enumerate(INTERACTION_INDICES):
                c, valid = concordance_counts(scores, refs[:, k])
                slot[1][8 + j] += c * valid
                slot[2][8 + j] += valid
            replay[req.request_id] = replay_request(req, scores, budget_s)
        except (ValueError, FloatingPointError) as exc:
            raise ValueError(f"request {req.request_id}: {exc}") from exc
    if not acc:
        raise ValueError("no request with at least two candidates to evaluate")

    def column(j: int) -> float:
        per_user = []
        for imp, num, den in acc.values():
            per_user.append((imp, num[j] / den[j] if den[j] > 0 else 0.5))
        return gauc(per_user)

    raw = {o: column(k) for k, o in enumerate(OBJECTIVES)}
    ip = {o: column(8 + j) for j, o in enumerate(INTERACTION_OBJECTIVES)}
    meta = {"budget_s": f"{budget_s:g}", **dict(metadata or {})}
    return EvalReport(raw, ip, float(np.mean(list(replay.values()))) if replay else 0.0, meta, replay)


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["objective", "metric", "value"])
        for obj, metric, value in report.rows():
            w.writerow([obj, metric, f"{value:.6f}"])
        for key in sorted(report.metadata):
            w.writerow(["meta", key, report.metadata[key]])


def read_report_csv(path) -> Dict[Tuple[str, str], str]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["objective", "metric", "value"]:
        raise ValueError(f"{path}: not an evaluation report (bad header)")
    return {(r[0], r[1]): r[2] for r in rows[1:]}


def write_replay_csv(replay: Mapping[str, float], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["request_id", "expected_interactions"])
        for rid in sorted(replay):
            w.writerow([rid, f"{replay[rid]:.6f}"])
