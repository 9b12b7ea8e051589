"""Meme-post corpus: manifest loading, tag cleanup, dedup, and train/test splitting.

A corpus is an immutable collection of :class:`PostRecord`. Every operation
returns a new corpus; nothing mutates in place, so corpora are safe to share
across workers.
"""

from __future__ import annotations

import json
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

from PIL import Image

log = logging.getLogger(__name__)

STAGE1_LABELS = ("toxic", "normal")
STAGE2_LABELS = ("hateful", "dangerous", "offensive", "undecided")
# "undecided" exists only as a majority-vote outcome, never as an annotator choice.
STAGE2_ASSIGNABLE = ("hateful", "dangerous", "offensive")
SPLITS = ("train", "test")

# Platform-noise tags stripped before any tag-based processing.
DEFAULT_TAG_STOPLIST = (
    "darkhumour",
    "memes",
    "you have been eternally cursed for reading the tags",
)

# Operative label definitions, used verbatim in classification prompts and
# shown to annotators. toxic follows the Perspective API wording, hateful the
# Facebook hateful-memes wording, dangerous the Dangerous Speech Project.
LABEL_DEFINITIONS = {
    "toxic": (
        "A rude, disrespectful, or unreasonable comment that is likely to make "
        "you leave a discussion."
    ),
    "normal": "A meme which is not toxic and follows social norms.",
    "hateful": (
        "A direct or indirect attack on people based on characteristics, "
        "including ethnicity, race, nationality, immigration status, religion, "
        "caste, sex, gender identity, sexual orientation, and disability or "
        "disease. Attack is defined as violent or dehumanizing (comparing "
        "people to non-human things, e.g., animals) speech, statements of "
        "inferiority, and calls for exclusion or segregation. Mocking hate "
        "crime is also considered hateful."
    ),
    "dangerous": (
        "A text, meme or speech which is not hateful but uses any form of "
        "expression that can increase the risk of its audience to condone or "
        "participate in violence against members of another group."
    ),
    "offensive": (
        "A text, meme or speech which is neither hateful, nor dangerous but "
        "uses abusive slurs or derogatory terms."
    ),
}

DHASH_BITS = 64


class CorpusError(Exception):
    """Fatal corpus problem (missing manifest, infeasible split, ...)."""


@dataclass(frozen=True)
class PostRecord:
    """One meme post with platform metadata and (optional) labels."""

    id: str
    image_path: str
    title: str
    ocr_text: str = ""
    ocr_boxes: tuple[tuple[int, int, int, int], ...] = ()
    tags: tuple[str, ...] = ()
    comment_count: int = 0
    stream: str = ""
    lens_context_raw: str | None = None
    lens_context_clean: str | None = None
    stage1_label: str | None = None
    stage2_label: str | None = None
    split: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("post id must be non-empty")
        if self.comment_count < 0:
            raise ValueError(f"{self.id}: comment_count must be >= 0")
        if self.stage1_label is not None and self.stage1_label not in STAGE1_LABELS:
            raise ValueError(f"{self.id}: bad stage1_label {self.stage1_label!r}")
        if self.stage2_label is not None:
            if self.stage2_label not in STAGE2_LABELS:
                raise ValueError(f"{self.id}: bad stage2_label {self.stage2_label!r}")
            if self.stage1_label != "toxic":
                raise ValueError(f"{self.id}: stage2_label requires stage1_label == 'toxic'")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"{self.id}: bad split {self.split!r}")

    @classmethod
    def from_json(cls, obj: dict) -> "PostRecord":
        if not isinstance(obj, dict):
            raise ValueError("record must be an object")
        known = {
            "id", "image_path", "title", "ocr_text", "ocr_boxes", "tags",
            "comment_count", "stream", "lens_context_raw", "lens_context_clean",
            "stage1_label", "stage2_label", "split",
        }
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown fields: {sorted(unknown)}")
        for required in ("id", "image_path", "title"):
            if required not in obj:
                raise ValueError(f"missing required field {required!r}")
        boxes = tuple(tuple(int(v) for v in box) for box in obj.get("ocr_boxes", ()))
        for box in boxes:
            if len(box) != 4:
                raise ValueError("ocr_boxes entries must have 4 coordinates")
        return cls(
            id=str(obj["id"]),
            image_path=str(obj["image_path"]),
            title=str(obj["title"]),
            ocr_text=str(obj.get("ocr_text", "")),
            ocr_boxes=boxes,
            tags=tuple(str(t) for t in obj.get("tags", ())),
            comment_count=int(obj.get("comment_count", 0)),
            stream=str(obj.get("stream", "")),
            lens_context_raw=obj.get("lens_context_raw"),
            lens_context_clean=obj.get("lens_context_clean"),
            stage1_label=obj.get("stage1_label"),
            stage2_label=obj.get("stage2_label"),
            split=obj.get("split"),
        )

    def to_json(self) -> dict:
        obj: dict = {
            "id": self.id,
            "image_path": self.image_path,
            "title": self.title,
            "ocr_text": self.ocr_text,
            "ocr_boxes": [list(b) for b in self.ocr_boxes],
            "tags": list(self.tags),
            "comment_count": self.comment_count,
            "stream": self.stream,
        }
        # Absent optional fields stay absent, not empty-string.
        for key in ("lens_context_raw", "lens_context_clean", "stage1_label", "stage2_label", "split"):
            value = getattr(self, key)
            if value is not None:
                obj[key] = value
        return obj


@dataclass(frozen=True)
class Corpus:
    """Immutable ordered collection of posts, plus the manifest root for image paths."""

    records: tuple[PostRecord, ...]
    root: Path | None = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise CorpusError(f"duplicate post id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PostRecord]:
        return iter(self.records)

    def get(self, post_id: str) -> PostRecord:
        for rec in self.records:
            if rec.id == post_id:
                return rec
        raise KeyError(post_id)

    def image_file(self, rec: PostRecord) -> Path:
        path = Path(rec.image_path)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return path

    def with_records(self, records: Sequence[PostRecord]) -> "Corpus":
        return Corpus(records=tuple(records), root=self.root)


@dataclass
class LoadReport:
    """Per-line problems found while loading a manifest."""

    errors: list[tuple[int, str]]
    missing_images: list[str]

    @property
    def n_errors(self) -> int:
        return len(self.errors)


def load_corpus(path: str | Path) -> tuple[Corpus, LoadReport]:
    """Load a line-delimited manifest (or a directory containing manifest.jsonl).

    Malformed lines are skipped and reported with their line number; records
    whose image file is missing are flagged but retained.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise CorpusError(f"manifest not found: {path}")
    root = path.parent

    records: list[PostRecord] = []
    errors: list[tuple[int, str]] = []
    missing: list[str] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = PostRecord.from_json(json.loads(line))
                if rec.id in seen:
                    raise ValueError(f"duplicate post id {rec.id!r}")
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                errors.append((lineno, str(exc)))
                continue
            seen.add(rec.id)
            image = root / rec.image_path if not Path(rec.image_path).is_absolute() else Path(rec.image_path)
            if not image.exists():
                missing.append(rec.id)
            records.append(rec)
    report = LoadReport(errors=errors, missing_images=missing)
    if errors:
        for lineno, msg in errors:
            log.warning("manifest line %d skipped: %s", lineno, msg)
    return Corpus(records=tuple(records), root=root), report


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in corpus:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def filter_min_comments(corpus: Corpus, k: int = 2) -> Corpus:
    """Keep posts with at least ``k`` comments (boundary inclusive), order preserved."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return corpus.with_records([r for r in corpus if r.comment_count >= k])


def normalize_tag(tag: str) -> str:
    return " ".join(tag.lower().split())


def clean_tag_list(tags: Sequence[str], stoplist: Sequence[str] = DEFAULT_TAG_STOPLIST) -> tuple[str, ...]:
    """Lowercase, trim, drop stoplist members and within-list duplicates."""
    stop = set(stoplist)
    out: list[str] = []
    for tag in tags:
        tag = normalize_tag(tag)
        if not tag or tag in stop or tag in out:
            continue
        out.append(tag)
    return tuple(out)


def clean_tags(corpus: Corpus, stoplist: Sequence[str] = DEFAULT_TAG_STOPLIST) -> Corpus:
    return corpus.with_records(
        [replace(r, tags=clean_tag_list(r.tags, stoplist)) for r in corpus]
    )


def dedup_exact(corpus: Corpus) -> list[list[PostRecord]]:
    """Group records sharing an identical (title, tag-set) pair.

    Tag lists are compared order-insensitively as sets. Singleton groups are
    omitted; group members come back sorted by id so the survivor choice in
    :func:`dedup_perceptual` is stable.
    """
    groups: dict[tuple[str, tuple[str, ...]], list[PostRecord]] = {}
    order: list[tuple[str, tuple[str, ...]]] = []
    for rec in corpus:
        key = (rec.title, tuple(sorted(set(rec.tags))))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(rec)
    return [sorted(groups[key], key=lambda r: r.id) for key in order if len(groups[key]) > 1]


def dhash64(image: str | Path | Image.Image) -> int:
    """64-bit difference hash: horizontal gradient of a 9x8 grayscale downsample."""
    if not isinstance(image, Image.Image):
        image = Image.open(image)
    gray = image.convert("L").resize((9, 8), Image.Resampling.LANCZOS)
    pixels = gray.tobytes()  # row-major, one byte per pixel in mode L
    value = 0
    for row in range(8):
        for col in range(8):
            if pixels[row * 9 + col] > pixels[row * 9 + col + 1]:
                value |= 1 << (row * 8 + col)
    return value


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


@dataclass(frozen=True)
class DedupResult:
    corpus: Corpus
    dropped: tuple[str, ...]
    flagged: tuple[str, ...]
    n_groups: int


def dedup_perceptual(
    corpus: Corpus,
    threshold: int = 0,
    groups: Sequence[Sequence[PostRecord]] | None = None,
) -> DedupResult:
    """Visual dedup inside exact-match candidate groups.

    Within each group (members in id order), a record is dropped when its
    dHash is within ``threshold`` Hamming bits of an already-kept record.
    Unreadable images are never dropped, only flagged.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if groups is None:
        groups = dedup_exact(corpus)
    dropped: list[str] = []
    flagged: list[str] = []
    for group in groups:
        kept_hashes: list[int] = []
        for rec in sorted(group, key=lambda r: r.id):
            try:
                h = dhash64(corpus.image_file(rec))
            except (OSError, ValueError) as exc:
                log.warning("dedup: unreadable image for %s (%s); record kept", rec.id, exc)
                flagged.append(rec.id)
                continue
            if any(hamming(h, k) <= threshold for k in kept_hashes):
                dropped.append(rec.id)
            else:
                kept_hashes.append(h)
    dropped_set = set(dropped)
    new_corpus = corpus.with_records([r for r in corpus if r.id not in dropped_set])
    return DedupResult(
        corpus=new_corpus,
        dropped=tuple(dropped),
        flagged=tuple(flagged),
        n_groups=len(groups),
    )


def split_train_test(
    corpus: Corpus,
    test_size: int = 1000,
    coverage: float = 0.15,
    seed: int = 0,
    min_tag_occurrences: int = 4,
) -> Corpus:
    """Assign train/test splits with per-tag test coverage.

    Every tag with at least ``min_tag_occurrences`` occurrences gets at least
    ``ceil(coverage * occurrences)`` of its posts into test. Constraints are
    satisfied greedily in descending tag-frequency order; the remainder of the
    test split is drawn at random from ``seed``. Deterministic for a fixed seed.
    """
    if not 0 <= coverage <= 1:
        raise ValueError("coverage must be in [0, 1]")
    if test_size >= len(corpus):
        raise CorpusError(f"test_size {test_size} must be smaller than corpus size {len(corpus)}")

    freq: Counter[str] = Counter()
    posts_by_tag: dict[str, list[str]] = {}
    for rec in corpus:
        for tag in rec.tags:
            freq[tag] += 1
            posts_by_tag.setdefault(tag, []).append(rec.id)

    rng = random.Random(seed)
    test_ids: set[str] = set()
    constrained = sorted(
        (t for t, n in freq.items() if n >= min_tag_occurrences),
        key=lambda t: (-freq[t], t),
    )
    for tag in constrained:
        need = math.ceil(coverage * freq[tag])
        have = sum(1 for pid in posts_by_tag[tag] if pid in test_ids)
        if have >= need:
            continue
        candidates = sorted(pid for pid in posts_by_tag[tag] if pid not in test_ids)
        rng.shuffle(candidates)
        take = need - have
        if len(test_ids) + take > test_size or take > len(candidates):
            raise CorpusError(
                f"split infeasible: tag {tag!r} needs {need} test posts "
                f"but only {test_size - len(test_ids)} test slots remain"
            )
        test_ids.update(candidates[:take])

    remaining = test_size - len(test_ids)
    pool = sorted(r.id for r in corpus if r.id not in test_ids)
    test_ids.update(rng.sample(pool, remaining))

    return corpus.with_records(
        [replace(r, split="test" if r.id in test_ids else "train") for r in corpus]
    )


@dataclass(frozen=True)
class CorpusStats:
    """Per-label counts by split, after labels are finalized."""

    label_counts: dict[str, dict[str, int]]
    split_sizes: dict[str, int]
    tag_vocabulary: int
    duplicate_groups: int

    STAT_LABELS = ("normal", "toxic", "hateful", "dangerous", "offensive", "undecided")


def corpus_stats(corpus: Corpus) -> CorpusStats:
    counts = {label: {"train": 0, "test": 0, "total": 0} for label in CorpusStats.STAT_LABELS}
    sizes = {"train": 0, "test": 0, "total": 0}
    vocab: set[str] = set()
    for rec in corpus:
        split = rec.split or "train"
        sizes[split] += 1
        sizes["total"] += 1
        vocab.update(rec.tags)
        for label in (rec.stage1_label, rec.stage2_label):
            if label is not None:
                counts[label][split] += 1
                counts[label]["total"] += 1
    return CorpusStats(
        label_counts=counts,
        split_sizes=sizes,
        tag_vocabulary=len(vocab),
        duplicate_groups=len(dedup_exact(corpus)),
    )


def format_stats_table(stats: CorpusStats) -> str:
    lines = [f"{'label':<12}{'train':>8}{'test':>8}{'total':>8}"]
    for label in CorpusStats.STAT_LABELS:
        row = stats.label_counts[label]
        lines.append(f"{label:<12}{row['train']:>8}{row['test']:>8}{row['total']:>8}")
    lines.append(
        f"{'Total':<12}{stats.split_sizes['train']:>8}{stats.split_sizes['test']:>8}{stats.split_sizes['total']:>8}"
    )
    lines.append(f"tag vocabulary: {stats.tag_vocabulary}")
    lines.append(f"duplicate groups: {stats.duplicate_groups}")
    return "\n".join(lines)
