"""Stage I / Stage II classification harness: exemplar-laced prompt assembly,
model invocation, response parsing, and benchmark runs.

The same machinery covers the transfer protocol for external binary-labeled
meme datasets (gold labels arrive through ``gold_override`` and the option
words through ``labels``), which is a Stage-I-shaped run with a different
label set and template.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from memeguard.corpus import LABEL_DEFINITIONS, Corpus, PostRecord
from memeguard.evalmetrics import MetricReport, macro_f1
from memeguard.exemplar import COMBINED_KINDS, ExemplarError, SelectionStrategy, select_exemplars
from memeguard.gateway import ChatMessage, ChatRequest, GatewayError, ModelGateway, parallel_map
from memeguard.tagging import PromptTemplates

log = logging.getLogger(__name__)

LABEL_SETS = {"I": ("toxic", "normal"), "II": ("hateful", "dangerous", "offensive")}
FHM_LABELS = ("hateful", "not-hateful")

# Definition shown for labels outside the core taxonomy (transfer runs).
EXTRA_DEFINITIONS = {
    "not-hateful": "A meme which does not attack any person or group and is not hateful.",
}

MAX_FAILURE_SHARE = 0.10


class ParseError(Exception):
    pass


class DetectError(Exception):
    pass


@dataclass(frozen=True)
class DetectionConfig:
    stage: str  # "I" or "II"
    strategy: SelectionStrategy
    model_id: str
    template_id: str = ""  # defaults to detect_stage1 / detect_stage2
    labels: tuple[str, ...] = ()  # override for transfer runs
    unparseable_policy: str = "strict"  # strict counts as wrong; drop excludes
    include_images: bool = True

    def __post_init__(self) -> None:
        if self.stage not in ("I", "II"):
            raise ValueError(f"stage must be I or II, got {self.stage!r}")
        if self.unparseable_policy not in ("strict", "drop"):
            raise ValueError(f"bad unparseable policy {self.unparseable_policy!r}")

    def label_set(self) -> tuple[str, ...]:
        return self.labels or LABEL_SETS[self.stage]

    def template(self) -> str:
        return self.template_id or ("detect_stage1" if self.stage == "I" else "detect_stage2")

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "strategy": self.strategy.to_json(),
            "model_id": self.model_id,
            "template_id": self.template(),
            "labels": list(self.label_set()),
            "unparseable_policy": self.unparseable_policy,
            "include_images": self.include_images,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PredictionRecord:
    post_id: str
    gold: str
    predicted: str | None  # None: unparseable or failed sample
    raw_text: str
    exemplar_ids: tuple[str, ...]
    latency: float

    def to_json(self) -> dict:
        return {
            "post_id": self.post_id,
            "gold": self.gold,
            "predicted": self.predicted,
            "raw_text": self.raw_text,
            "exemplar_ids": list(self.exemplar_ids),
            "latency": self.latency,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PredictionRecord":
        return cls(
            post_id=obj["post_id"],
            gold=obj["gold"],
            predicted=obj["predicted"],
            raw_text=obj["raw_text"],
            exemplar_ids=tuple(obj["exemplar_ids"]),
            latency=obj["latency"],
        )


# ------------------------------------------------------------------ labels

def gold_label(
    rec: PostRecord,
    stage: str,
    override: Mapping[str, str] | None = None,
) -> str | None:
    if override is not None:
        return override.get(rec.id)
    return rec.stage1_label if stage == "I" else rec.stage2_label


def eligible_test_posts(
    corpus: Corpus,
    stage: str,
    gold_override: Mapping[str, str] | None = None,
) -> list[PostRecord]:
    """Test-split posts this stage evaluates.

    Stage II covers only posts finalized toxic with a decided fine-grained
    label; undecided samples are excluded here, at evaluation time.
    """
    out = []
    for rec in corpus:
        if rec.split != "test":
            continue
        gold = gold_label(rec, stage, gold_override)
        if gold is None or gold == "undecided":
            continue
        if stage == "II" and gold_override is None and rec.stage1_label != "toxic":
            continue
        out.append(rec)
    return out


def parse_label(raw: str, labels: Sequence[str]) -> str:
    """Case-insensitive scan for the stage's label words.

    Exactly one distinct label may occur; longer labels shadow shorter ones
    they contain (so a "not-hateful" answer does not also count as
    "hateful"). Punctuation is stripped before matching.
    """
    normalized = " ".join(re.sub(r"[^a-z0-9]+", " ", raw.lower()).split())
    haystack = f" {normalized} "
    found: list[str] = []
    for label in sorted(labels, key=len, reverse=True):
        needle = " " + " ".join(re.sub(r"[^a-z0-9]+", " ", label.lower()).split()) + " "
        if needle in haystack:
            found.append(label)
            haystack = haystack.replace(needle, " # ")
    if len(found) != 1:
        raise ParseError(f"expected exactly one label word in {raw!r}, found {sorted(found)}")
    return found[0]


# ------------------------------------------------------------------ prompts

def _post_block(rec: PostRecord, label: str | None) -> str:
    lines = []
    if label is not None:
        lines.append(f"Example labeled {label}:")
    lines.append(f"Title: {rec.title}")
    lines.append(f"OCR text: {rec.ocr_text}")
    if rec.tags:
        lines.append(f"Tags: {', '.join(rec.tags)}")
    return "\n".join(lines)


def build_prompt(
    config: DetectionConfig,
    query: PostRecord,
    exemplars: Sequence[PostRecord],
    templates: PromptTemplates,
    image_of: Callable[[PostRecord], Path] | None = None,
    gold_override: Mapping[str, str] | None = None,
) -> ChatRequest:
    """Label definitions, then each exemplar with its gold label, then the
    unlabeled query, instructing a single-word answer. Temperature 0.001 and
    max_new_tokens 30 ride on the request defaults."""
    labels = config.label_set()
    blocks = []
    for ex in exemplars:
        gold = gold_label(ex, config.stage, gold_override)
        if gold is None:
            raise DetectError(f"exemplar {ex.id} is missing a stage {config.stage} gold label")
        blocks.append(_post_block(ex, gold))
    definitions = "\n".join(
        f"- {label}: {LABEL_DEFINITIONS.get(label) or EXTRA_DEFINITIONS.get(label, '')}".rstrip(": ")
        for label in labels
    )
    text = templates.render(
        config.template(),
        options=", ".join(labels),
        definitions=definitions,
        exemplars="".join(block + "\n\n" for block in blocks),
        query=_post_block(query, None),
    )
    images: tuple[str, ...] = ()
    if config.include_images and image_of is not None:
        images = tuple(str(image_of(rec)) for rec in (*exemplars, query))
    return ChatRequest(
        model_id=config.model_id,
        messages=(ChatMessage(role="user", text=text, images=images),),
        temperature=0.001,
        max_new_tokens=30,
    )


# ------------------------------------------------------------------ benchmark

@dataclass
class BenchmarkResult:
    report: MetricReport
    predictions_path: Path
    report_path: Path
    n_eval: int
    n_failures: int


def _classify_one(
    config: DetectionConfig,
    query: PostRecord,
    pool: Sequence[PostRecord],
    gateway: ModelGateway,
    templates: PromptTemplates,
    image_of: Callable[[PostRecord], Path] | None,
    embed_image,
    embed_text,
    predicted_tags,
    gold_override,
) -> PredictionRecord:
    gold = gold_label(query, config.stage, gold_override)
    exemplars = select_exemplars(
        query, pool, config.strategy,
        embed_image=embed_image, embed_text=embed_text, predicted_tags=predicted_tags,
    )
    assert all(ex.id != query.id for ex in exemplars)
    req = build_prompt(config, query, exemplars, templates, image_of, gold_override)
    raw = gateway.chat_complete(req)
    latency = gateway.last_latency
    try:
        predicted = parse_label(raw, config.label_set())
    except ParseError:
        # one retry with a firmer instruction (a distinct request, so replay
        # from a frozen cache stays deterministic)
        retry = ChatRequest(
            model_id=req.model_id,
            messages=req.messages + (
                ChatMessage(role="user", text=f"Answer with exactly one word: {', '.join(config.label_set())}."),
            ),
            temperature=req.temperature,
            max_new_tokens=req.max_new_tokens,
        )
        raw = gateway.chat_complete(retry)
        latency += gateway.last_latency
        try:
            predicted = parse_label(raw, config.label_set())
        except ParseError:
            log.warning("unparseable answer for %s: %r", query.id, raw)
            predicted = None
    return PredictionRecord(
        post_id=query.id,
        gold=gold,
        predicted=predicted,
        raw_text=raw,
        exemplar_ids=tuple(ex.id for ex in exemplars),
        latency=latency,
    )


def run_benchmark(
    config: DetectionConfig,
    corpus: Corpus,
    gateway: ModelGateway,
    templates: PromptTemplates,
    out_dir: str | Path,
    predicted_tags: Mapping[str, Sequence[str]] | None = None,
    gold_override: Mapping[str, str] | None = None,
) -> BenchmarkResult:
    """Classify every eligible test post and score the persisted predictions.

    Individual sample failures are recorded and the run continues; a run with
    more than 10% failures is marked invalid. The metric report is computed
    from the persisted prediction file, never from in-memory state.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    queries = eligible_test_posts(corpus, config.stage, gold_override)
    if not queries:
        raise DetectError("no eligible test posts for this stage")
    pool = [
        r for r in corpus
        if r.split == "train" and gold_label(r, config.stage, gold_override) not in (None, "undecided")
    ]
    image_of = corpus.image_file if config.include_images else None
    needs_image = config.strategy.kind in ("image",) + COMBINED_KINDS
    embed_image = (lambda rec: gateway.embed_image(corpus.image_file(rec))) if needs_image else None
    embed_text = lambda text: gateway.embed_text(text)

    n_failures = 0
    def worker(query: PostRecord) -> PredictionRecord:
        try:
            return _classify_one(
                config, query, pool, gateway, templates,
                image_of, embed_image, embed_text, predicted_tags, gold_override,
            )
        except (GatewayError, DetectError, ExemplarError, OSError) as exc:
            log.warning("sample %s failed: %s", query.id, exc)
            return PredictionRecord(
                post_id=query.id,
                gold=gold_label(query, config.stage, gold_override),
                predicted=None,
                raw_text=f"ERROR: {exc}",
                exemplar_ids=(),
                latency=0.0,
            )

    records = parallel_map(worker, queries, gateway.config.parallelism)
    n_failures = sum(1 for r in records if r.raw_text.startswith("ERROR:"))

    digest = config.digest()
    predictions_path = out_dir / f"predictions_{digest[:12]}.jsonl"
    header = {
        "config": config.to_json(),
        "config_digest": digest,
        "template_checksum": templates.checksum(config.template()),
        "alpha": config.strategy.alpha,
        "seed": config.strategy.seed,
        "n_eligible": len(queries),
    }
    with predictions_path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True, ensure_ascii=False) + "\n")

    report = score_prediction_file(predictions_path, config.label_set(), config.unparseable_policy)
    if n_failures > MAX_FAILURE_SHARE * len(queries):
        report.valid = False
        report.warnings.append(
            f"{n_failures}/{len(queries)} samples failed; run marked invalid"
        )
    report_path = out_dir / f"report_{digest[:12]}.json"
    report_path.write_text(
        json.dumps(report.to_json(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return BenchmarkResult(
        report=report,
        predictions_path=predictions_path,
        report_path=report_path,
        n_eval=len(queries),
        n_failures=n_failures,
    )


def read_prediction_file(path: str | Path) -> tuple[dict, list[PredictionRecord]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    records = [PredictionRecord.from_json(json.loads(line)) for line in lines[1:] if line.strip()]
    return header, records


def score_prediction_file(
    path: str | Path,
    classes: Sequence[str],
    policy: str = "strict",
) -> MetricReport:
    """Single source of truth for benchmark scores: macro-F1 over the
    persisted prediction records."""
    header, records = read_prediction_file(path)
    n_unparseable = sum(1 for r in records if r.predicted is None)
    if policy == "drop":
        records = [r for r in records if r.predicted is not None]
    pairs = [(r.gold, r.predicted) for r in records]
    if not pairs:
        report = MetricReport(
            metrics={"macro_f1": 0.0},
            per_class={},
            warnings=["no scorable records after applying the drop policy"],
        )
    else:
        report = macro_f1(pairs, classes=list(classes))
    report.config_digest = header.get("config_digest")
    report.metrics["n_scored"] = float(len(pairs))
    report.metrics["n_unparseable"] = float(n_unparseable)
    return report


def make_alpha_objective(
    base_config: DetectionConfig,
    validation: Sequence[PostRecord],
    pool: Sequence[PostRecord],
    gateway: ModelGateway,
    templates: PromptTemplates,
    out_dir: str | Path,
    predicted_tags: Mapping[str, Sequence[str]] | None = None,
    gold_override: Mapping[str, str] | None = None,
    corpus_root: Path | None = None,
) -> Callable[[float], tuple[float, int]]:
    """Downstream objective for the alpha grid search: macro-F1 of the
    benchmark over a labeled validation set, exemplars drawn from ``pool``."""
    if base_config.strategy.kind not in COMBINED_KINDS:
        raise DetectError("alpha tuning needs a combined selection strategy")
    overlap = {r.id for r in validation} & {r.id for r in pool}
    if overlap:
        raise DetectError(f"validation set overlaps the pool: {sorted(overlap)[:5]}")
    records = tuple(
        [replace(r, split="train") for r in pool] + [replace(r, split="test") for r in validation]
    )
    eval_corpus = Corpus(records=records, root=corpus_root)
    out_dir = Path(out_dir)

    def objective(alpha: float) -> tuple[float, int]:
        config = replace(
            base_config,
            strategy=replace(base_config.strategy, alpha=alpha),
            include_images=base_config.include_images,
        )
        result = run_benchmark(
            config, eval_corpus, gateway, templates,
            out_dir / f"alpha_{alpha:.1f}",
            predicted_tags=predicted_tags, gold_override=gold_override,
        )
        return result.report.metrics["macro_f1"], result.n_eval

    return objective
