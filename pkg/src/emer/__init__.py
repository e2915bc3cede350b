"""End-to-end multi-objective ensemble ranking at desk scale."""

from emer.domain import (
    INTERACTION_OBJECTIVES,
    OBJECTIVES,
    Candidate,
    FeedbackRecord,
    Request,
    satisfaction_level,
)

__version__ = "0.1.0"

__all__ = [
    "INTERACTION_OBJECTIVES",
    "OBJECTIVES",
    "Candidate",
    "FeedbackRecord",
    "Request",
    "satisfaction_level",
]
