"""Macro-F1 scoring and three-rater majority voting."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from memeguard.corpus import STAGE1_LABELS, STAGE2_ASSIGNABLE

log = logging.getLogger(__name__)


@dataclass
class MetricReport:
    """Named scalar metrics with per-class breakdowns.

    ``metrics`` values are on a 0-100 scale; ``per_class`` precision/recall/f1
    are raw fractions in [0, 1]. ``metrics["macro_f1"]`` is 100 times the
    unweighted mean of the per-class F1s.
    """

    metrics: dict[str, float]
    per_class: dict[str, dict[str, float]]
    config_digest: str | None = None
    warnings: list[str] = field(default_factory=list)
    valid: bool = True

    def to_json(self) -> dict:
        return {
            "metrics": self.metrics,
            "per_class": self.per_class,
            "config_digest": self.config_digest,
            "warnings": self.warnings,
            "valid": self.valid,
        }


def macro_f1(
    pairs: Sequence[tuple[str, str | None]],
    classes: Sequence[str] | None = None,
) -> MetricReport:
    """Per-class F1 (0/0 -> 0 convention) macro-averaged over ``classes``.

    ``pairs`` is (gold, predicted). Predictions outside the class set (parse
    failures under the strict policy, recorded as None) count against their
    gold class only. When ``classes`` is omitted it defaults to the sorted set
    of gold labels.
    """
    if not pairs:
        raise ValueError("macro_f1 needs at least one (gold, pred) pair")
    golds = [g for g, _ in pairs]
    if classes is None:
        classes = sorted(set(golds))

    warnings: list[str] = []
    per_class: dict[str, dict[str, float]] = {}
    f1_sum = 0.0
    for label in classes:
        tp = sum(1 for g, p in pairs if g == label and p == label)
        fp = sum(1 for g, p in pairs if g != label and p == label)
        fn = sum(1 for g, p in pairs if g == label and p != label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        support = tp + fn
        if support == 0:
            warnings.append(f"class {label!r} has no gold instances; F1 = 0")
            log.warning("macro_f1: %s", warnings[-1])
        per_class[label] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": float(support),
        }
        f1_sum += f1
    return MetricReport(
        metrics={"macro_f1": 100.0 * f1_sum / len(classes)},
        per_class=per_class,
        warnings=warnings,
    )


def majority_vote(labels: Sequence[str], stage: str) -> str:
    """Resolve exactly three annotator labels to a final label.

    Stage I always resolves (two labels, three votes). A three-way Stage II
    disagreement yields "undecided" -- the only way that label is assigned.
    """
    if len(labels) != 3:
        raise ValueError(f"majority_vote needs exactly 3 labels, got {len(labels)}")
    assignable = {"I": STAGE1_LABELS, "II": STAGE2_ASSIGNABLE}.get(stage)
    if assignable is None:
        raise ValueError(f"unknown stage {stage!r}")
    for label in labels:
        if label not in assignable:
            raise ValueError(f"label {label!r} not assignable in stage {stage}")
    winner, count = Counter(labels).most_common(1)[0]
    if count >= 2:
        return winner
    return "undecided"
