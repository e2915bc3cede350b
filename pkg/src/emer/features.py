"""Numeric encoding of a request's candidate set.

Each candidate becomes a 17-wide row: the 8 raw pxtrs, the 8 normalized
ranks of those pxtrs inside the request, and ``log(1 + pvtr)``. Feedback
and exposure never enter the encoding since scoring happens before exposure.
"""

from __future__ import annotations

import numpy as np

from emer.domain import N_OBJECTIVES, PVTR_INDEX, Request

N_FEATURES = 2 * N_OBJECTIVES + 1
RAW_SLICE = slice(0, N_OBJECTIVES)
RANK_SLICE = slice(N_OBJECTIVES, 2 * N_OBJECTIVES)
LOG_PVTR_COLUMN = 2 * N_OBJECTIVES


def _item_order(item_ids) -> np.ndarray:
    """Position of each item id in ascending string order."""
    ids = np.asarray(item_ids, dtype=object)
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    pos = np.empty(len(ids), dtype=np.int64)
    pos[order] = np.arange(len(ids))
    return pos


def rank_matrix(values: np.ndarray, item_ids) -> np.ndarray:
    """1-based descending ranks per column with ties broken by item id ascending."""
    values = np.asarray(values, dtype=np.float64)
    n, m = values.shape
    tiebreak = _item_order(item_ids)
    ranks = np.empty((n, m), dtype=np.float64)
    for k in range(m):
        order = np.lexsort((tiebreak, -values[:, k]))
        ranks[order, k] = np.arange(1, n + 1)
    return ranks


def normalized_ranks(request: Request) -> np.ndarray:
    """``(n, 8)`` matrix of rank / n; the top candidate per objective gets 1/n."""
    return rank_matrix(request.pxtrs, request.item_ids) / request.n


def encode(request: Request) -> np.ndarray:
    """``(n, 17)`` feature matrix for the scorer."""
    out = np.empty((request.n, N_FEATURES), dtype=np.float64)
    out[:, RAW_SLICE] = request.pxtrs
    out[:, RANK_SLICE] = normalized_ranks(request)
    out[:, LOG_PVTR_COLUMN] = np.log1p(request.pxtrs[:, PVTR_INDEX])
    return out


def zero_ranks(features: np.ndarray) -> np.ndarray:
    """Copy of ``features`` with the normalized-rank block zeroed (isolated scoring)."""
    out = np.array(features, dtype=np.float64, copy=True)
    out[:, RANK_SLICE] = 0.0
    return out
