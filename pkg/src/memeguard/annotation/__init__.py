"""Two-stage annotation service: batch rollout with daily caps, triple
assignment, majority-vote finalization, summary rating, and agreement
analytics."""

from memeguard.annotation.store import (
    AnnotationStore,
    AnnotatorProfile,
    StoreConflict,
    StoreError,
)
from memeguard.annotation.service import create_app

__all__ = [
    "AnnotationStore",
    "AnnotatorProfile",
    "StoreConflict",
    "StoreError",
    "create_app",
]
