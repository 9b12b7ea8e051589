"""Summary-quality metrics: BLEU, chrF, ROUGE-L, a light METEOR, and
sentence-embedding cosine.

All metrics are sentence-level over a (candidate, reference) pair. BLEU,
ROUGE-L and meteor_lite score in [0, 1]; chrF and sbert_cosine in [0, 100].
"""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Callable, Sequence

import numpy as np

BLEU_ORDER = 4
BLEU_EPS = 1e-9
CHRF_ORDER = 6
CHRF_BETA = 2.0


def _require_nonempty(candidate: str, reference: str) -> None:
    if not candidate or not reference:
        raise ValueError("candidate and reference must be non-empty")


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str) -> float:
    """4-gram BLEU with brevity penalty; zero n-gram matches are smoothed to
    an epsilon count so short or partly-overlapping pairs stay comparable.

    Uses the effective order (largest n the candidate supports) so identity
    pairs score exactly 1.0 regardless of length.
    """
    _require_nonempty(candidate, reference)
    hyp = candidate.split()
    ref = reference.split()
    if not hyp:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, BLEU_ORDER + 1):
        hyp_ngrams = _ngram_counts(hyp, n)
        total = sum(hyp_ngrams.values())
        if total == 0:
            break
        ref_ngrams = _ngram_counts(ref, n)
        matches = sum((hyp_ngrams & ref_ngrams).values())
        p = matches / total if matches else BLEU_EPS / total
        log_sum += math.log(p)
        orders += 1
    if orders == 0:
        return 0.0
    bp = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return bp * math.exp(log_sum / orders)


def _char_ngrams(s: str, n: int) -> Counter:
    return Counter(s[i : i + n] for i in range(len(s) - n + 1))


def chrf(candidate: str, reference: str, beta: float = CHRF_BETA) -> float:
    """Character n-gram F-score (orders 1..6, recall-weighted by beta=2),
    whitespace removed, on a 0-100 scale."""
    _require_nonempty(candidate, reference)
    hyp = re.sub(r"\s+", "", candidate)
    ref = re.sub(r"\s+", "", reference)
    avg_p = 0.0
    avg_r = 0.0
    effective = 0
    for n in range(1, CHRF_ORDER + 1):
        hyp_ngrams = _char_ngrams(hyp, n)
        ref_ngrams = _char_ngrams(ref, n)
        total_hyp = sum(hyp_ngrams.values())
        total_ref = sum(ref_ngrams.values())
        if total_hyp > 0 and total_ref > 0:
            matches = sum((hyp_ngrams & ref_ngrams).values())
            avg_p += matches / total_hyp
            avg_r += matches / total_ref
            effective += 1
    if effective == 0:
        return 0.0
    avg_p /= effective
    avg_r /= effective
    if avg_p + avg_r == 0.0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * avg_p * avg_r / (b2 * avg_p + avg_r)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # single-row DP table
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: str, reference: str) -> float:
    """Longest-common-subsequence F-measure over whitespace tokens."""
    _require_nonempty(candidate, reference)
    hyp = candidate.split()
    ref = reference.split()
    if not hyp or not ref:
        return 0.0
    lcs = _lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hyp)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


_STEM_SUFFIXES = ("ings", "ing", "edly", "ed", "est", "ies", "es", "s")


def light_stem(token: str) -> str:
    """Rule-light suffix stripper; enough to merge inflectional variants."""
    token = token.lower()
    for suffix in _STEM_SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            if suffix == "s" and token.endswith("ss"):
                continue
            if suffix == "ies":
                return token[: -len(suffix)] + "y"
            return token[: -len(suffix)]
    return token


def _align(hyp: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Greedy unigram alignment: exact matches first, stem matches second."""
    matched_ref: set[int] = set()
    alignment: dict[int, int] = {}
    for key in (lambda t: t, light_stem):
        ref_keys = [key(t) for t in ref]
        for i, tok in enumerate(hyp):
            if i in alignment:
                continue
            want = key(tok)
            for j, have in enumerate(ref_keys):
                if j not in matched_ref and have == want:
                    alignment[i] = j
                    matched_ref.add(j)
                    break
    return sorted(alignment.items())


def meteor_lite(candidate: str, reference: str) -> float:
    """Unigram harmonic mean (recall weighted 9:1) with fragmentation penalty.

    Matching is exact plus light stemming; no synonym dictionary.
    """
    _require_nonempty(candidate, reference)
    hyp = candidate.lower().split()
    ref = reference.lower().split()
    alignment = _align(hyp, ref)
    m = len(alignment)
    if m == 0:
        return 0.0
    precision = m / len(hyp)
    recall = m / len(ref)
    f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(alignment, alignment[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def sbert_cosine(
    candidate: str,
    reference: str,
    embed: Callable[[str], np.ndarray],
) -> float:
    """Sentence-embedding cosine similarity on a 0-100 scale."""
    _require_nonempty(candidate, reference)
    a = np.asarray(embed(candidate), dtype=float)
    b = np.asarray(embed(reference), dtype=float)
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return 100.0 * float(np.dot(a, b)) / denom
