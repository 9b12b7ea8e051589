"""Tag-set similarity: mean over ground-truth tags of the best match among
generated tags, by semantic cosine, token-level F1, or ConceptNet relatedness."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)

METHODS = ("semantic", "token_f1", "conceptnet")


class SimilarityBackend(Protocol):
    """The slice of the model gateway these metrics need."""

    def embed_text(self, text: str): ...
    def conceptnet_relatedness(self, a: str, b: str) -> float: ...
    def expand_tag(self, tag: str) -> str: ...


def _cosine(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b)) / denom


def _token_f1(a: str, b: str, gateway: SimilarityBackend) -> float:
    """BERTScore-style greedy max-cosine token matching; F1 of the
    precision/recall means."""
    ref_tokens = a.split()
    cand_tokens = b.split()
    if not ref_tokens or not cand_tokens:
        return 0.0
    ref_vecs = [np.asarray(gateway.embed_text(t)) for t in ref_tokens]
    cand_vecs = [np.asarray(gateway.embed_text(t)) for t in cand_tokens]
    recall = float(np.mean([max(_cosine(r, c) for c in cand_vecs) for r in ref_vecs]))
    precision = float(np.mean([max(_cosine(c, r) for r in ref_vecs) for c in cand_vecs]))
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def pairwise_similarity(a: str, b: str, method: str, gateway: SimilarityBackend) -> float:
    if method == "semantic":
        return _cosine(gateway.embed_text(a), gateway.embed_text(b))
    if method == "token_f1":
        return _token_f1(a, b, gateway)
    if method == "conceptnet":
        return gateway.conceptnet_relatedness(a, b)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def tag_similarity(
    gt: Sequence[str],
    gen: Sequence[str],
    method: str = "semantic",
    expanded: bool = False,
    *,
    gateway: SimilarityBackend,
) -> float:
    """Mean over ground-truth tags of the max pairwise similarity to any
    generated tag.

    With ``expanded`` both tag lists are mapped through the search expansion
    first and compared as expansion texts (tags whose expansion comes back
    empty fall back to the raw tag). ConceptNet targets short phrases, so it
    cannot be combined with expansion.
    """
    if method == "conceptnet" and expanded:
        raise ValueError("conceptnet similarity is not defined over expanded tag lists")
    if not gt:
        raise ValueError("ground-truth tag set must be non-empty")
    if not gen:
        log.warning("empty generated tag set; similarity defined as 0")
        return 0.0
    if expanded:
        gt = [gateway.expand_tag(t) or t for t in gt]
        gen = [gateway.expand_tag(t) or t for t in gen]
    return float(
        np.mean([max(pairwise_similarity(t, e, method, gateway) for e in gen) for t in gt])
    )


@dataclass
class TagSimReport:
    method: str
    expanded: bool
    per_post: dict[str, float]  # raw mean-of-max scores in [-1, 1]
    corpus_mean: float
    scaled_mean: float  # corpus_mean * 100, the reporting convention
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "expanded": self.expanded,
            "corpus_mean": self.corpus_mean,
            "scaled_mean": self.scaled_mean,
            "per_post": dict(sorted(self.per_post.items())),
            "warnings": self.warnings,
        }


def corpus_tag_similarity(
    items: Sequence[tuple[str, Sequence[str], Sequence[str]]],
    method: str = "semantic",
    expanded: bool = False,
    *,
    gateway: SimilarityBackend,
) -> TagSimReport:
    """Per-post mean-of-max scores plus their corpus mean.

    ``items`` is (post_id, ground-truth tags, generated tags). Posts with an
    empty ground-truth set are skipped with a warning; empty generated sets
    score 0.
    """
    per_post: dict[str, float] = {}
    warnings: list[str] = []
    for post_id, gt, gen in items:
        if not gt:
            warnings.append(f"{post_id}: empty ground-truth tags, skipped")
            continue
        per_post[post_id] = tag_similarity(gt, gen, method, expanded, gateway=gateway)
    if not per_post:
        raise ValueError("no scorable posts")
    mean = float(np.mean(list(per_post.values())))
    return TagSimReport(
        method=method,
        expanded=expanded,
        per_post=per_post,
        corpus_mean=mean,
        scaled_mean=100.0 * mean,
        warnings=warnings,
    )
