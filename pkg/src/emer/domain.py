"""Core data types: the objective taxonomy, candidates, feedback and requests.

A :class:`Request` is the unit training sample. It carries the whole
candidate set of one user interaction, exposed and unexposed, stored
column-wise so that 500-candidate requests stay cheap to pass around.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

OBJECTIVES: Tuple[str, ...] = (
    "pvtr",
    "pctr",
    "plvtr",
    "pcpr",
    "pltr",
    "pwtr",
    "pcmtr",
    "pftr",
)
N_OBJECTIVES = len(OBJECTIVES)
INTERACTION_OBJECTIVES: Tuple[str, ...] = ("pltr", "pwtr", "pcmtr", "pftr")
WATCH_TIME_OBJECTIVE = "pvtr"

OBJECTIVE_INDEX: Dict[str, int] = {name: i for i, name in enumerate(OBJECTIVES)}
INTERACTION_INDICES: Tuple[int, ...] = tuple(OBJECTIVE_INDEX[o] for o in INTERACTION_OBJECTIVES)
PVTR_INDEX = OBJECTIVE_INDEX[WATCH_TIME_OBJECTIVE]

POSITIVE_SIGNALS: Tuple[str, ...] = ("like", "follow", "comment", "forward", "long_view")


def objective_index(name: str) -> int:
    try:
        return OBJECTIVE_INDEX[name]
    except KeyError:
        raise KeyError(f"unknown objective {name!r}; expected one of {list(OBJECTIVES)}") from None


def is_interaction(name: str) -> bool:
    return name in INTERACTION_OBJECTIVES


def validate_pxtrs(values: np.ndarray) -> None:
    """Raise ``ValueError`` if an (n, 8) pxtr matrix breaks the value ranges.

    pvtr is watch time in seconds and only needs to be non-negative; every
    other objective is a probability.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != N_OBJECTIVES:
        raise ValueError(f"pxtr matrix must have shape (n, {N_OBJECTIVES}), got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("pxtr values must be finite")
    if np.any(values[:, PVTR_INDEX] < 0):
        raise ValueError("pvtr must be non-negative seconds")
    probs = np.delete(values, PVTR_INDEX, axis=1)
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probability out of range")


@dataclass(frozen=True)
class FeedbackRecord:
    """Post-exposure user feedback on one candidate."""

    like: bool = False
    follow: bool = False
    comment: bool = False
    forward: bool = False
    long_view: bool = False
    dislike: bool = False
    watch_time_s: float = 0.0

    def __post_init__(self):
        if not self.watch_time_s >= 0:
            raise ValueError(f"watch_time_s must be >= 0, got {self.watch_time_s}")

    def positives(self) -> int:
        return sum(bool(getattr(self, name)) for name in POSITIVE_SIGNALS)


def satisfaction_level(fb: FeedbackRecord) -> int:
    """Position of a feedback record in the Many > Single > No Positive hierarchy.

    Returns -1 when the user disliked the item (dislike dominates any positive
    flag, even on malformed input), otherwise the number of distinct positive
    signals among like, follow, comment, forward and long_view.
    """
    if fb.dislike:
        return -1
    return fb.positives()


@dataclass(frozen=True)
class Candidate:
    item_id: str
    pxtrs: Mapping[str, float]
    exposed: bool
    feedback: Optional[FeedbackRecord] = None

    def __post_init__(self):
        if set(self.pxtrs) != set(OBJECTIVES):
            unknown = sorted(set(self.pxtrs) - set(OBJECTIVES))
            missing = sorted(set(OBJECTIVES) - set(self.pxtrs))
            raise ValueError(f"bad pxtr keys: unknown={unknown} missing={missing}")
        validate_pxtrs(np.array([[self.pxtrs[o] for o in OBJECTIVES]]))
        if self.exposed != (self.feedback is not None):
            raise ValueError("feedback must be present exactly when the candidate is exposed")

    def pxtr_vector(self) -> np.ndarray:
        return np.array([self.pxtrs[o] for o in OBJECTIVES], dtype=np.float64)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Request:
    """One user request with its full candidate set in upstream retrieval order.

    Attributes:
        request_id: Opaque identifier.
        user_id: Opaque identifier.
        timestamp: Epoch seconds.
        item_ids: One id per candidate, unique within the request.
        pxtrs: ``(n, 8)`` float matrix, columns in :data:`OBJECTIVES` order.
        exposed: ``(n,)`` bool mask of candidates shown to the user.
        feedback: Candidate index -> feedback, defined exactly for exposed rows.
    """

    request_id: str
    user_id: str
    timestamp: int
    item_ids: Tuple[str, ...]
    pxtrs: np.ndarray
    exposed: np.ndarray
    feedback: Mapping[int, FeedbackRecord] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "item_ids", tuple(str(i) for i in self.item_ids))
        object.__setattr__(self, "pxtrs", _frozen(np.asarray(self.pxtrs, dtype=np.float64)))
        object.__setattr__(self, "exposed", _frozen(np.asarray(self.exposed, dtype=bool)))
        object.__setattr__(self, "feedback", dict(sorted(self.feedback.items())))
        n = len(self.item_ids)
        if n == 0:
            raise ValueError(f"request {self.request_id}: candidate set is empty")
        if len(set(self.item_ids)) != n:
            raise ValueError(f"request {self.request_id}: duplicate item_id")
        if self.pxtrs.shape != (n, N_OBJECTIVES) or self.exposed.shape != (n,):
            raise ValueError(f"request {self.request_id}: column lengths disagree with item count")
        validate_pxtrs(self.pxtrs)
        if set(self.feedback) != set(np.flatnonzero(self.exposed).tolist()):
            raise ValueError(
                f"request {self.request_id}: feedback must be present exactly for exposed candidates"
            )

    @classmethod
    def from_candidates(
        cls, request_id: str, user_id: str, timestamp: int, candidates: Sequence[Candidate]
    ) -> "Request":
        return cls(
            request_id=request_id,
            user_id=user_id,
            timestamp=int(timestamp),
            item_ids=tuple(c.item_id for c in candidates),
            pxtrs=np.array([c.pxtr_vector() for c in candidates]).reshape(len(candidates), N_OBJECTIVES),
            exposed=np.array([c.exposed for c in candidates], dtype=bool),
            feedback={i: c.feedback for i, c in enumerate(candidates) if c.feedback is not None},
        )

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def exposed_indices(self) -> np.ndarray:
        return np.flatnonzero(self.exposed)

    @property
    def candidates(self) -> Tuple[Candidate, ...]:
        return tuple(
            Candidate(
                item_id=self.item_ids[i],
                pxtrs={o: float(self.pxtrs[i, k]) for k, o in enumerate(OBJECTIVES)},
                exposed=bool(self.exposed[i]),
                feedback=self.feedback.get(i),
            )
            for i in range(self.n)
        )

    def column(self, objective: str) -> np.ndarray:
        return self.pxtrs[:, objective_index(objective)]

    def levels(self) -> np.ndarray:
        """Satisfaction level per candidate; unexposed rows get level 0 and are never paired."""
        out = np.zeros(self.n, dtype=np.int64)
        for i, fb in self.feedback.items():
            out[i] = satisfaction_level(fb)
        return out

    def permuted(self, order: Iterable[int]) -> "Request":
        order = np.asarray(list(order), dtype=np.int64)
        inverse = {int(old): new for new, old in enumerate(order)}
        return Request(
            request_id=self.request_id,
            user_id=self.user_id,
            timestamp=self.timestamp,
            item_ids=tuple(self.item_ids[i] for i in order),
            pxtrs=self.pxtrs[order],
            exposed=self.exposed[order],
            feedback={inverse[i]: fb for i, fb in self.feedback.items()},
        )

    def without_feedback(self) -> "Request":
        """Same candidates with feedback replaced by all-false records (exposure kept)."""
        return Request(
            request_id=self.request_id,
            user_id=self.user_id,
            timestamp=self.timestamp,
            item_ids=self.item_ids,
            pxtrs=self.pxtrs,
            exposed=self.exposed,
            feedback={i: FeedbackRecord() for i in self.feedback},
        )

    def __eq__(self, other):
        if not isinstance(other, Request):
            return NotImplemented
        return (
            self.request_id == other.request_id
            and self.user_id == other.user_id
            and self.timestamp == other.timestamp
            and self.item_ids == other.item_ids
            and np.array_equal(self.pxtrs, other.pxtrs)
            and np.array_equal(self.exposed, other.exposed)
            and self.feedback == other.feedback
        )

    __hash__ = None
