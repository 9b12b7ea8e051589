"""Few-shot exemplar selection over the train pool.

Six strategies: seeded random draw, image-embedding similarity, ground-truth
or predicted tag-set similarity, and the two convex combinations of image and
tag scores weighted by alpha.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from memeguard.corpus import PostRecord

log = logging.getLogger(__name__)

RANDOM = "random"
IMAGE = "image"
GT_TAGS = "gt_tags"
PRED_TAGS = "pred_tags"
IMAGE_GT = "image_gt_combined"
IMAGE_PRED = "image_pred_combined"

KINDS = (RANDOM, IMAGE, GT_TAGS, PRED_TAGS, IMAGE_GT, IMAGE_PRED)
COMBINED_KINDS = (IMAGE_GT, IMAGE_PRED)
PRED_KINDS = (PRED_TAGS, IMAGE_PRED)

ALPHA_GRID = tuple(round(i / 10, 1) for i in range(11))


class ExemplarError(Exception):
    pass


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str
    k: int = 2
    alpha: float | None = None  # combined kinds only
    seed: int | None = None  # random kind only

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kind in COMBINED_KINDS:
            if self.alpha is None:
                raise ValueError(f"{self.kind} requires alpha")
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError("alpha must be in [0, 1]")
        elif self.alpha is not None:
            raise ValueError(f"{self.kind} does not take alpha")
        if self.kind == RANDOM and self.seed is None:
            raise ValueError("random strategy requires a seed")
        if self.kind != RANDOM and self.seed is not None:
            raise ValueError(f"{self.kind} does not take a seed")

    def to_json(self) -> dict:
        return {"kind": self.kind, "k": self.k, "alpha": self.alpha, "seed": self.seed}


@dataclass(frozen=True)
class ScoredCandidate:
    post_id: str
    image_sim: float
    tag_sim: float
    combined: float


def tag_set_similarity(
    query: Sequence[str],
    candidate: Sequence[str],
    embed: Callable[[str], object],
) -> float:
    """Mean over query tags of the max cosine to any candidate tag.

    Empty sides score 0 with a warning: normal-class posts can legitimately
    end up tagless after cleaning.
    """
    if not query or not candidate:
        log.warning("tag_set_similarity over an empty tag set; scoring 0")
        return 0.0
    cand_vecs = [np.asarray(embed(t), dtype=float) for t in candidate]
    maxima = []
    for tag in query:
        q = np.asarray(embed(tag), dtype=float)
        qn = float(np.linalg.norm(q))
        best = max(
            float(np.dot(q, c)) / (qn * float(np.linalg.norm(c)))
            for c in cand_vecs
        )
        maxima.append(best)
    return float(np.mean(maxima))


def _tags_of(
    rec: PostRecord,
    kind: str,
    predicted: Mapping[str, Sequence[str]] | None,
) -> Sequence[str]:
    if kind in PRED_KINDS:
        if predicted is None or rec.id not in predicted:
            raise ExemplarError(f"no predicted tags for post {rec.id}")
        return predicted[rec.id]
    return rec.tags


def score_pool(
    query: PostRecord,
    pool: Sequence[PostRecord],
    strategy: SelectionStrategy,
    *,
    embed_image: Callable[[PostRecord], object] | None = None,
    embed_text: Callable[[str], object] | None = None,
    predicted_tags: Mapping[str, Sequence[str]] | None = None,
) -> list[ScoredCandidate]:
    """Score every pool candidate under the strategy's kind.

    ``combined = alpha * image_sim + (1 - alpha) * tag_sim`` for the combined
    kinds; pure kinds carry their own score in ``combined`` and 0 elsewhere.
    """
    needs_image = strategy.kind in (IMAGE,) + COMBINED_KINDS
    needs_tags = strategy.kind in (GT_TAGS, PRED_TAGS) + COMBINED_KINDS
    if needs_image and embed_image is None:
        raise ExemplarError(f"{strategy.kind} needs an image embedder")
    if needs_tags and embed_text is None:
        raise ExemplarError(f"{strategy.kind} needs a text embedder")

    tag_kind = GT_TAGS if strategy.kind in (GT_TAGS, IMAGE_GT) else PRED_TAGS
    if needs_tags:
        query_tags = _tags_of(query, tag_kind, predicted_tags)
        if all(not _tags_of(rec, tag_kind, predicted_tags) for rec in pool):
            raise ExemplarError("every candidate in the pool is tagless")

    query_image_vec = None
    if needs_image:
        query_image_vec = np.asarray(embed_image(query), dtype=float)

    scored = []
    for rec in pool:
        image_sim = 0.0
        tag_sim = 0.0
        if needs_image:
            c = np.asarray(embed_image(rec), dtype=float)
            denom = float(np.linalg.norm(query_image_vec) * np.linalg.norm(c))
            image_sim = float(np.dot(query_image_vec, c)) / denom if denom else 0.0
        if needs_tags:
            tag_sim = tag_set_similarity(query_tags, _tags_of(rec, tag_kind, predicted_tags), embed_text)
        if strategy.kind == IMAGE:
            combined = image_sim
        elif strategy.kind in (GT_TAGS, PRED_TAGS):
            combined = tag_sim
        else:
            combined = strategy.alpha * image_sim + (1 - strategy.alpha) * tag_sim
        scored.append(ScoredCandidate(post_id=rec.id, image_sim=image_sim, tag_sim=tag_sim, combined=combined))
    return scored


def select_exemplars(
    query: PostRecord,
    pool: Sequence[PostRecord],
    strategy: SelectionStrategy,
    *,
    embed_image: Callable[[PostRecord], object] | None = None,
    embed_text: Callable[[str], object] | None = None,
    predicted_tags: Mapping[str, Sequence[str]] | None = None,
) -> list[PostRecord]:
    """Pick the strategy's k exemplars for a query post.

    The query itself and any test-split post are excluded no matter what the
    caller passes in. Similarity kinds return the top-k by score with ties
    broken by post id, ordered by descending score; the random kind returns
    k seeded draws in draw order.
    """
    eligible = [r for r in pool if r.id != query.id and r.split != "test"]
    if len(eligible) < strategy.k:
        raise ExemplarError(
            f"pool has {len(eligible)} eligible posts, need k={strategy.k}"
        )
    if strategy.kind == RANDOM:
        rng = random.Random(strategy.seed)
        ordered = sorted(eligible, key=lambda r: r.id)
        return rng.sample(ordered, strategy.k)

    scored = score_pool(
        query, eligible, strategy,
        embed_image=embed_image, embed_text=embed_text, predicted_tags=predicted_tags,
    )
    by_id = {r.id: r for r in eligible}
    ranked = sorted(scored, key=lambda s: (-s.combined, s.post_id))
    return [by_id[s.post_id] for s in ranked[: strategy.k]]


# ------------------------------------------------------------------ alpha search

@dataclass(frozen=True)
class AlphaScore:
    alpha: float
    macro_f1: float | None
    n_eval: int
    error: str | None = None

    @property
    def valid(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class AlphaSearchResult:
    best_alpha: float
    table: tuple[AlphaScore, ...]


def tune_alpha(
    objective: Callable[[float], tuple[float, int]],
    table_path: str | Path | None = None,
    grid: Sequence[float] = ALPHA_GRID,
) -> AlphaSearchResult:
    """Grid search over alpha using the downstream classification objective.

    ``objective(alpha)`` returns (macro_f1, n_eval) -- see
    ``detect.make_alpha_objective``. Ties break toward smaller alpha; the full
    score table is persisted when a path is given. An alpha whose evaluation
    fails is marked invalid; all-invalid is an error.
    """
    table: list[AlphaScore] = []
    for alpha in grid:
        try:
            score, n_eval = objective(alpha)
            table.append(AlphaScore(alpha=alpha, macro_f1=score, n_eval=n_eval))
        except Exception as exc:  # objective failures poison only this alpha
            log.warning("alpha %.1f evaluation failed: %s", alpha, exc)
            table.append(AlphaScore(alpha=alpha, macro_f1=None, n_eval=0, error=str(exc)))
    valid = [row for row in table if row.valid]
    if not valid:
        raise ExemplarError("every alpha evaluation failed")
    best = max(valid, key=lambda row: (row.macro_f1, -row.alpha))
    if table_path is not None:
        path = Path(table_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for row in table:
                fh.write(json.dumps(
                    {"alpha": row.alpha, "macro_f1": row.macro_f1, "n_eval": row.n_eval,
                     **({"error": row.error} if row.error else {})},
                    sort_keys=True,
                ) + "\n")
    return AlphaSearchResult(best_alpha=best.alpha, table=tuple(table))


def with_alpha(strategy: SelectionStrategy, alpha: float) -> SelectionStrategy:
    if strategy.kind not in COMBINED_KINDS:
        raise ValueError("alpha applies only to combined strategies")
    return replace(strategy, alpha=alpha)
