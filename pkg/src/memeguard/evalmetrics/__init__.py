"""Measurement machinery: classification scores, agreement statistics,
text-generation metrics, tag-similarity metrics, and corpus analyses."""

from memeguard.evalmetrics.agreement import AgreementReport, fleiss_kappa
from memeguard.evalmetrics.analysis import cooccurrence, lemmatize_tag, top_tags, word_frequencies
from memeguard.evalmetrics.classification import MetricReport, macro_f1, majority_vote
from memeguard.evalmetrics.tagsim import TagSimReport, corpus_tag_similarity, tag_similarity
from memeguard.evalmetrics.textgen import bleu, chrf, meteor_lite, rouge_l, sbert_cosine

__all__ = [
    "AgreementReport",
    "MetricReport",
    "TagSimReport",
    "bleu",
    "chrf",
    "cooccurrence",
    "corpus_tag_similarity",
    "fleiss_kappa",
    "lemmatize_tag",
    "macro_f1",
    "majority_vote",
    "meteor_lite",
    "rouge_l",
    "sbert_cosine",
    "tag_similarity",
    "top_tags",
    "word_frequencies",
]
