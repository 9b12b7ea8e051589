"""Corpus analyses over finalized labels: tag co-occurrence themes,
per-class top tags, and word-frequency exports."""

from __future__ import annotations

from collections import Counter
from itertools import combinations
from typing import Iterable

from memeguard.corpus import Corpus, PostRecord


def lemmatize_tag(tag: str) -> str:
    """Lowercase fold plus plural 's' stripping, per word."""
    words = []
    for word in tag.lower().split():
        if len(word) >= 4 and word.endswith("s") and not word.endswith("ss"):
            word = word[:-1]
        words.append(word)
    return " ".join(words)


def _records_with_label(corpus: Iterable[PostRecord], label: str) -> list[PostRecord]:
    return [r for r in corpus if label in (r.stage1_label, r.stage2_label)]


def cooccurrence(corpus: Corpus, min_count: int = 1) -> list[tuple[tuple[str, str], int]]:
    """Within-post tag pairs after lemmatization, ranked by count then
    alphabetically."""
    counts: Counter[tuple[str, str]] = Counter()
    for rec in corpus:
        lemmas = sorted({lemmatize_tag(t) for t in rec.tags if t})
        for pair in combinations(lemmas, 2):
            counts[pair] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(pair, n) for pair, n in ranked if n >= min_count]


def top_tags(corpus: Corpus, label: str, n: int = 30) -> list[tuple[str, int]]:
    """Most frequent (lemmatized) tags among posts carrying ``label``."""
    counts: Counter[str] = Counter()
    for rec in _records_with_label(corpus, label):
        for tag in rec.tags:
            if tag:
                counts[lemmatize_tag(tag)] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:n]


def word_frequencies(corpus: Corpus, label: str | None = None) -> Counter:
    """Tag-word frequency table (the word-cloud substitute)."""
    records = corpus if label is None else _records_with_label(corpus, label)
    counts: Counter[str] = Counter()
    for rec in records:
        for tag in rec.tags:
            counts.update(lemmatize_tag(tag).split())
    return counts
