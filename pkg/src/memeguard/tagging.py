"""Tag generation pipeline: enrichment-context cleaning, ground-truth and
tagless summaries, tag extraction from summaries, and fine-tune data export.

The pipeline is a two-step decomposition: summarize the meme first, then
extract keyword tags from the summary. Inpainting happens outside this
artifact; when a pre-inpainted image is supplied its path is used for
captioning, otherwise the original image is used with a recorded warning.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from memeguard.corpus import Corpus, PostRecord
from memeguard.gateway import ChatMessage, ChatRequest, ModelGateway

log = logging.getLogger(__name__)

MAX_TAGS = 15
MAX_TAG_LENGTH = 80
UNPARSEABLE_SINGLE_TOKEN = 200

CAPTION_MAX_TOKENS = 30
SUMMARY_MAX_TOKENS = 150


class TaggingError(Exception):
    pass


class UnparseableTagResponse(TaggingError):
    pass


# ------------------------------------------------------------------ lens cleanup

_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
_PLATFORM_RE = re.compile(r"\b[ru]/\w+")
_EMOJI_RE = re.compile(
    "[{}-{}{}-{}{}-{}{}{}{}]+".format(
        chr(0x1F000), chr(0x1FAFF),  # emoji, symbols, pictographs
        chr(0x2600), chr(0x27BF),    # misc symbols, dingbats
        chr(0x2B00), chr(0x2BFF),
        chr(0xFE0E), chr(0xFE0F),    # variation selectors
        chr(0x200D),                 # zero-width joiner
    )
)
_METRIC_RE = re.compile(
    r"\b\d+(?:[.,]\d+)?\s*[kmb]?\s*(?:likes?|views?|comments?|shares?|upvotes?|followers?|subscribers?)\b",
    re.IGNORECASE,
)
_MENTION_RE = re.compile(r"@\w+")
# Keep Latin letters (incl. extensions), digits, punctuation; drop other scripts.
_NON_LATIN_RE = re.compile(
    "[{}-{}{}-{}]+".format(chr(0x0250), chr(0x1FFF), chr(0x2070), chr(0x10FFFF))
)


def clean_lens_context(raw: str) -> str:
    """Scrub a web-context snippet down to plain Latin-script text.

    Applies, in order: trim, URL strip, platform prefixes (r/, u/), emoji
    removal, count metrics ("2.5K likes"), @mentions, non-Latin script runs,
    whitespace collapse. Idempotent.
    """
    text = raw.strip()
    text = _URL_RE.sub(" ", text)
    text = _PLATFORM_RE.sub(" ", text)
    text = _EMOJI_RE.sub(" ", text)
    text = _METRIC_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    text = _NON_LATIN_RE.sub(" ", text)
    return " ".join(text.split())


# ------------------------------------------------------------------ templates

class PromptTemplates:
    """Versioned plain-text prompt templates with named placeholders.

    Checksums are logged into run manifests so any wording change shows up in
    provenance.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else Path(__file__).parent / "templates"
        if not self.directory.is_dir():
            raise TaggingError(f"template directory not found: {self.directory}")

    def path(self, name: str) -> Path:
        return self.directory / f"{name}.txt"

    def raw(self, name: str) -> str:
        path = self.path(name)
        if not path.exists():
            raise TaggingError(f"unknown prompt template {name!r}")
        return path.read_text(encoding="utf-8")

    def render(self, name: str, **fields: str) -> str:
        return self.raw(name).format_map(fields)

    def checksum(self, name: str) -> str:
        return hashlib.sha256(self.path(name).read_bytes()).hexdigest()

    def checksums(self) -> dict[str, str]:
        return {
            p.stem: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(self.directory.glob("*.txt"))
        }


# ------------------------------------------------------------------ context

@dataclass
class EnrichedContext:
    """Everything beyond the raw post that feeds the summary prompts."""

    caption: str = ""
    lens_clean: str = ""
    tag_expansions: dict[str, str] = field(default_factory=dict)

    def expansions_text(self) -> str:
        return "\n".join(f"{tag}: {exp}" for tag, exp in self.tag_expansions.items() if exp)


def generate_caption(
    gateway: ModelGateway,
    templates: PromptTemplates,
    post: PostRecord,
    image_file: str | Path,
    inpainted_file: str | Path | None = None,
    variant: str = "original",
) -> str:
    """Caption the meme image (max 30 new tokens).

    With ``variant="inpainted"`` the pre-inpainted file is used so the caption
    is independent of the overlaid text; a missing inpainted file falls back
    to the original with a recorded warning.
    """
    image = Path(image_file)
    if variant == "inpainted":
        if inpainted_file and Path(inpainted_file).exists():
            image = Path(inpainted_file)
        else:
            log.warning("no inpainted image for %s; captioning the original", post.id)
            gateway.warnings.append(f"caption fallback to original image for {post.id}")
    req = ChatRequest(
        model_id=gateway.config.chat_model,
        messages=(ChatMessage(role="user", text=templates.render("caption"), images=(str(image),)),),
        max_new_tokens=CAPTION_MAX_TOKENS,
    )
    return gateway.chat_complete(req)


def build_enriched_context(
    gateway: ModelGateway,
    templates: PromptTemplates,
    post: PostRecord,
    image_file: str | Path,
    inpainted_file: str | Path | None = None,
    expand: bool = True,
) -> EnrichedContext:
    lens = post.lens_context_clean or clean_lens_context(post.lens_context_raw or "")
    caption = generate_caption(
        gateway, templates, post, image_file, inpainted_file,
        variant="inpainted" if inpainted_file else "original",
    )
    expansions = {t: gateway.expand_tag(t) for t in post.tags} if expand else {}
    return EnrichedContext(caption=caption, lens_clean=lens, tag_expansions=expansions)


# ------------------------------------------------------------------ summaries

@dataclass(frozen=True)
class SummaryRecord:
    post_id: str
    kind: str  # ground_truth | generated
    text: str
    model_id: str

    def __post_init__(self) -> None:
        if self.kind not in ("ground_truth", "generated"):
            raise ValueError(f"bad summary kind {self.kind!r}")
        if not self.text:
            raise ValueError("summary text must be non-empty")


class SummaryStore:
    """Append-only JSONL store of summaries, keyed by (post_id, kind)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._records: dict[tuple[str, str], SummaryRecord] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    obj = json.loads(line)
                    rec = SummaryRecord(**obj)
                    self._records[(rec.post_id, rec.kind)] = rec

    def add(self, record: SummaryRecord) -> None:
        self._records[(record.post_id, record.kind)] = record
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.__dict__, sort_keys=True, ensure_ascii=False) + "\n")

    def get(self, post_id: str, kind: str) -> SummaryRecord | None:
        return self._records.get((post_id, kind))

    def __len__(self) -> int:
        return len(self._records)


def build_groundtruth_summary_prompt(
    templates: PromptTemplates,
    model_id: str,
    post: PostRecord,
    ctx: EnrichedContext,
) -> ChatRequest:
    """Teacher prompt: title, OCR, caption, tags, web context, and tag
    expansions in labeled sections, instructing a summary that weaves in
    every tag."""
    if not post.tags:
        raise TaggingError(f"{post.id}: ground-truth summary prompt needs tags")
    text = templates.render(
        "summary_groundtruth",
        title=post.title,
        ocr=post.ocr_text,
        caption=ctx.caption,
        tags=", ".join(post.tags),
        lens=ctx.lens_clean,
        expansions=ctx.expansions_text(),
    )
    return ChatRequest(
        model_id=model_id,
        messages=(ChatMessage(role="user", text=text),),
        max_new_tokens=SUMMARY_MAX_TOKENS,
    )


def build_tagless_summary_prompt(
    templates: PromptTemplates,
    model_id: str,
    post: PostRecord,
    ctx: EnrichedContext,
    image_file: str | Path | None = None,
) -> ChatRequest:
    """Student prompt: same sections minus anything tag-derived."""
    text = templates.render(
        "summary_tagless",
        title=post.title,
        ocr=post.ocr_text,
        caption=ctx.caption,
        lens=ctx.lens_clean,
    )
    images = (str(image_file),) if image_file else ()
    return ChatRequest(
        model_id=model_id,
        messages=(ChatMessage(role="user", text=text, images=images),),
        max_new_tokens=SUMMARY_MAX_TOKENS,
    )


def generate_summary(
    gateway: ModelGateway,
    templates: PromptTemplates,
    post: PostRecord,
    ctx: EnrichedContext,
    mode: str,
    store: SummaryStore | None = None,
    image_file: str | Path | None = None,
) -> SummaryRecord:
    """Run one summary generation and persist it.

    ``ground_truth`` targets the teacher model with the tag-blended prompt;
    ``tagless`` targets the fine-tuned summary model with tags and expansions
    omitted entirely.
    """
    if mode == "ground_truth":
        req = build_groundtruth_summary_prompt(templates, gateway.config.chat_model, post, ctx)
        kind = "ground_truth"
    elif mode == "tagless":
        req = build_tagless_summary_prompt(
            templates, gateway.config.summary_model, post, ctx, image_file
        )
        kind = "generated"
    else:
        raise ValueError(f"unknown summary mode {mode!r}")
    text = gateway.chat_complete(req)
    record = SummaryRecord(post_id=post.id, kind=kind, text=text, model_id=req.model_id)
    if store is not None:
        store.add(record)
    return record


# ------------------------------------------------------------------ tag extraction

def parse_tag_response(text: str) -> list[str]:
    """Split a model reply into a normalized tag list (comma or newline
    separated, lowercased, deduplicated, capped at 15)."""
    stripped = text.strip()
    if not re.search(r"[,\n]", stripped) and len(stripped) > UNPARSEABLE_SINGLE_TOKEN:
        raise UnparseableTagResponse(f"single {len(stripped)}-char token with no separators")
    tags: list[str] = []
    for part in re.split(r"[,\n]", stripped):
        tag = " ".join(part.lower().split())
        if not tag or len(tag) > MAX_TAG_LENGTH or tag in tags:
            continue
        tags.append(tag)
    return tags[:MAX_TAGS]


def extract_tags(
    gateway: ModelGateway,
    templates: PromptTemplates,
    summary: SummaryRecord,
) -> list[str]:
    """Prompt the extraction model for a comma-separated tag list; one retry
    with a stricter instruction before giving up."""
    for template in ("tag_extract", "tag_extract_strict"):
        req = ChatRequest(
            model_id=gateway.config.tag_model,
            messages=(ChatMessage(role="user", text=templates.render(template, summary=summary.text)),),
            max_new_tokens=SUMMARY_MAX_TOKENS,
        )
        try:
            tags = parse_tag_response(gateway.chat_complete(req))
        except UnparseableTagResponse as exc:
            log.warning("tag extraction for %s unparseable (%s); retrying", summary.post_id, exc)
            continue
        if tags:
            return tags
        log.warning("empty tag extraction for %s; retrying", summary.post_id)
    raise TaggingError(f"tag extraction failed for post {summary.post_id}")


def predict_tags(
    gateway: ModelGateway,
    templates: PromptTemplates,
    post: PostRecord,
    ctx: EnrichedContext,
    store: SummaryStore | None = None,
    image_file: str | Path | None = None,
) -> list[str]:
    """Tagless summary followed by tag extraction; the intermediate summary
    is persisted when a store is given."""
    summary = generate_summary(gateway, templates, post, ctx, "tagless", store, image_file)
    return extract_tags(gateway, templates, summary)


# ------------------------------------------------------------------ fine-tune export

@dataclass
class ExportReport:
    path: Path
    n_exported: int
    n_skipped: int


def export_finetune_data(
    corpus: Corpus,
    store: SummaryStore,
    task: str,
    out_path: str | Path,
    templates: PromptTemplates,
    contexts: Mapping[str, EnrichedContext] | None = None,
) -> ExportReport:
    """Write line-delimited {input, target} training records for the train split.

    ``summary`` task: tagless prompt text -> ground-truth summary.
    ``tags`` task: ground-truth summary -> comma-joined ground-truth tags.
    Train records lacking a ground-truth summary are skipped and counted.
    """
    if task not in ("summary", "tags"):
        raise ValueError(f"unknown export task {task!r}")
    contexts = contexts or {}
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n_exported = 0
    n_skipped = 0
    with out_path.open("w", encoding="utf-8") as fh:
        for rec in corpus:
            if rec.split != "train":
                continue
            gt = store.get(rec.id, "ground_truth")
            if gt is None:
                n_skipped += 1
                continue
            if task == "summary":
                ctx = contexts.get(rec.id, EnrichedContext())
                prompt = build_tagless_summary_prompt(
                    templates, "finetune", rec, ctx
                ).messages[0].text
                entry = {"input": prompt, "target": gt.text}
            else:
                entry = {"input": gt.text, "target": ", ".join(rec.tags)}
            fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
            n_exported += 1
    return ExportReport(path=out_path, n_exported=n_exported, n_skipped=n_skipped)
