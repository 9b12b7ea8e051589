"""Single entry point for every pipeline workflow.

Configuration precedence is flags > environment > config file; the resolved
settings, seeds, and template checksums land in a run manifest next to every
artifact a command produces. Exit codes: 0 success, 1 validation problem,
2 external-service failure.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import click

from memeguard import corpus as corpus_mod
from memeguard import detect as detect_mod
from memeguard import exemplar as exemplar_mod
from memeguard import tagging as tagging_mod
from memeguard.annotation import AnnotationStore, AnnotatorProfile, StoreError, create_app
from memeguard.corpus import Corpus, CorpusError
from memeguard.evalmetrics import (
    bleu,
    chrf,
    cooccurrence,
    corpus_tag_similarity,
    fleiss_kappa,
    meteor_lite,
    rouge_l,
    sbert_cosine,
    top_tags,
)
from memeguard.exemplar import ExemplarError, SelectionStrategy
from memeguard.gateway import (
    GatewayConfig,
    GatewayError,
    HttpTransport,
    ModelGateway,
    StubTransport,
    canonical_digest,
)
from memeguard.tagging import PromptTemplates, SummaryStore, TaggingError


@dataclass
class RunManifest:
    """Provenance record emitted once per artifact-producing command."""

    command: str
    argv: list[str]
    config_digest: str
    seeds: dict[str, int | None] = field(default_factory=dict)
    template_checksums: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""

    def write(self, directory: Path) -> Path:
        self.finished_at = datetime.now(timezone.utc).isoformat()
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "run_manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _manifest(ctx: click.Context, outputs: list[Path], seeds: dict | None = None,
              templates: PromptTemplates | None = None) -> RunManifest:
    gateway_config: GatewayConfig = ctx.obj["config"]
    config_dict = {k: str(v) for k, v in asdict(gateway_config).items()}
    digest = canonical_digest("config", config_dict).digest
    manifest = RunManifest(
        command=ctx.command_path,
        argv=sys.argv[1:],
        config_digest=digest,
        seeds=seeds or {},
        template_checksums=templates.checksums() if templates else {},
        outputs=[str(p) for p in outputs],
        started_at=ctx.obj["started_at"],
    )
    manifest.write(outputs[0].parent if outputs else Path("."))
    return manifest


def _load(manifest_path: str) -> Corpus:
    corpus, report = corpus_mod.load_corpus(manifest_path)
    if report.errors:
        for lineno, message in report.errors:
            click.echo(f"manifest line {lineno}: {message}", err=True)
    if report.missing_images:
        click.echo(f"{len(report.missing_images)} records have missing image files", err=True)
    return corpus


def _gateway(ctx: click.Context, endpoint: str, corpus: Corpus | None = None,
             stage: str | None = None) -> ModelGateway:
    config: GatewayConfig = ctx.obj["config"]
    if endpoint == "live":
        return ModelGateway(config, transport=HttpTransport(config))
    if endpoint == "cache-only":
        return ModelGateway(config, transport=None)
    if endpoint == "stub":
        def deterministic_chat(payload: dict) -> str:
            digest = canonical_digest("chat", payload).digest
            return f"stub completion {digest[:12]}"

        return ModelGateway(config, transport=StubTransport(chat=deterministic_chat))
    if endpoint == "stub-oracle":
        if corpus is None or stage is None:
            raise click.UsageError("stub-oracle endpoint needs a corpus and stage")
        field_name = "stage1_label" if stage == "I" else "stage2_label"
        gold_by_title = {r.title: getattr(r, field_name) for r in corpus}

        def oracle_chat(payload: dict) -> str:
            content = payload["messages"][0]["content"]
            text = content if isinstance(content, str) else content[0]["text"]
            query = text.split("Meme to classify:")[-1]
            for line in query.splitlines():
                if line.startswith("Title: "):
                    return gold_by_title.get(line[len("Title: "):], "") or ""
            return ""

        return ModelGateway(config, transport=StubTransport(chat=oracle_chat))
    raise click.UsageError(f"unknown endpoint mode {endpoint!r}")


ENDPOINT_OPTION = click.option(
    "--endpoint", default="live", show_default=True,
    type=click.Choice(["live", "cache-only", "stub", "stub-oracle"]),
    help="live HTTP endpoints, frozen-cache replay, or deterministic stubs",
)
FORMAT_OPTION = click.option(
    "--format", "fmt", default="table", show_default=True,
    type=click.Choice(["table", "records"]),
)


def _emit(rows: list[dict], fmt: str) -> None:
    if fmt == "records":
        for row in rows:
            click.echo(json.dumps(row, sort_keys=True, ensure_ascii=False))
        return
    if not rows:
        click.echo("(empty)")
        return
    keys = list(rows[0].keys())
    widths = {k: max(len(str(k)), *(len(str(r.get(k, ""))) for r in rows)) for k in keys}
    click.echo("  ".join(str(k).ljust(widths[k]) for k in keys))
    for row in rows:
        click.echo("  ".join(str(row.get(k, "")).ljust(widths[k]) for k in keys))


@click.group()
@click.option("--config", "config_path", envvar="MEMEGUARD_CONFIG",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="gateway config file (flat KEY = value format)")
@click.option("--cache-dir", envvar="MEMEGUARD_CACHE_DIR", default=None,
              help="gateway response cache directory")
@click.pass_context
def cli(ctx: click.Context, config_path: str | None, cache_dir: str | None) -> None:
    """Moderation-pipeline workbench for tagged meme corpora."""
    config = GatewayConfig.from_file(config_path) if config_path else GatewayConfig()
    if cache_dir:
        config.cache_dir = cache_dir
    ctx.ensure_object(dict)
    ctx.obj["config"] = config
    ctx.obj["started_at"] = _now()


# ================================================================= corpus

@cli.group()
def corpus() -> None:
    """Corpus curation: ingest, dedup, split, stats."""


@corpus.command("ingest")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path())
@click.option("--min-comments", default=2, show_default=True)
@click.option("--stoplist", type=click.Path(exists=True), default=None,
              help="file with one stoplist tag per line")
@click.pass_context
def corpus_ingest(ctx, manifest, out, min_comments, stoplist):
    """Load, filter by comment count, and clean tags."""
    stop = corpus_mod.DEFAULT_TAG_STOPLIST
    if stoplist:
        stop = tuple(t.strip().lower() for t in Path(stoplist).read_text().splitlines() if t.strip())
    loaded = _load(manifest)
    cleaned = corpus_mod.clean_tags(corpus_mod.filter_min_comments(loaded, min_comments), stop)
    corpus_mod.save_corpus(cleaned, out)
    click.echo(f"{len(loaded)} loaded, {len(cleaned)} kept -> {out}")
    _manifest(ctx, [Path(out)])


@corpus.command("dedup")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path())
@click.option("--threshold", default=0, show_default=True, help="Hamming distance threshold")
@click.pass_context
def corpus_dedup(ctx, manifest, out, threshold):
    """Exact-match grouping followed by perceptual dedup inside groups."""
    loaded = _load(manifest)
    result = corpus_mod.dedup_perceptual(loaded, threshold=threshold)
    corpus_mod.save_corpus(result.corpus, out)
    click.echo(
        f"{len(loaded)} -> {len(result.corpus)} records "
        f"({len(result.dropped)} dropped, {len(result.flagged)} unreadable kept, "
        f"{result.n_groups} candidate groups)"
    )
    _manifest(ctx, [Path(out)])


@corpus.command("split")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path())
@click.option("--test-size", default=1000, show_default=True)
@click.option("--coverage", default=0.15, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_context
def corpus_split(ctx, manifest, out, test_size, coverage, seed):
    """Assign train/test with per-tag test coverage."""
    loaded = _load(manifest)
    split = corpus_mod.split_train_test(loaded, test_size=test_size, coverage=coverage, seed=seed)
    corpus_mod.save_corpus(split, out)
    click.echo(f"train {sum(1 for r in split if r.split == 'train')}, "
               f"test {sum(1 for r in split if r.split == 'test')} -> {out}")
    _manifest(ctx, [Path(out)], seeds={"split": seed})


@corpus.command("stats")
@click.argument("manifest", type=click.Path(exists=True))
def corpus_stats_cmd(manifest):
    """Per-label counts by split."""
    loaded = _load(manifest)
    click.echo(corpus_mod.format_stats_table(corpus_mod.corpus_stats(loaded)))


# ================================================================= tags

@cli.group()
def tags() -> None:
    """Tag-generation pipeline: context cleaning, summaries, prediction, export."""


@tags.command("clean-lens")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path())
@click.pass_context
def tags_clean_lens(ctx, manifest, out):
    """Fill lens_context_clean from lens_context_raw for every record."""
    from dataclasses import replace

    loaded = _load(manifest)
    cleaned = loaded.with_records([
        replace(r, lens_context_clean=tagging_mod.clean_lens_context(r.lens_context_raw or ""))
        for r in loaded
    ])
    corpus_mod.save_corpus(cleaned, out)
    click.echo(f"cleaned lens context for {len(cleaned)} records -> {out}")
    _manifest(ctx, [Path(out)])


@tags.command("expand")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path())
@ENDPOINT_OPTION
@click.pass_context
def tags_expand(ctx, manifest, out, endpoint):
    """Search-expand every distinct tag in the corpus."""
    loaded = _load(manifest)
    gateway = _gateway(ctx, endpoint)
    distinct = sorted({t for r in loaded for t in r.tags})
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as fh:
        for tag in distinct:
            fh.write(json.dumps({"tag": tag, "expansion": gateway.expand_tag(tag)},
                                sort_keys=True, ensure_ascii=False) + "\n")
    click.echo(f"expanded {len(distinct)} tags -> {out} ({len(gateway.warnings)} warnings)")
    _manifest(ctx, [out_path])


@tags.command("gt-summary")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--summaries", "summaries_path", required=True, type=click.Path(),
              help="summary store (JSONL) to append into")
@ENDPOINT_OPTION
@click.pass_context
def tags_gt_summary(ctx, manifest, summaries_path, endpoint):
    """Generate ground-truth summaries for every tagged record."""
    loaded = _load(manifest)
    gateway = _gateway(ctx, endpoint)
    templates = PromptTemplates()
    store = SummaryStore(summaries_path)
    n = 0
    for rec in loaded:
        if not rec.tags or store.get(rec.id, "ground_truth"):
            continue
        ctx_data = tagging_mod.build_enriched_context(
            gateway, templates, rec, loaded.image_file(rec)
        )
        tagging_mod.generate_summary(gateway, templates, rec, ctx_data, "ground_truth", store)
        n += 1
    click.echo(f"generated {n} ground-truth summaries -> {summaries_path}")
    _manifest(ctx, [Path(summaries_path)], templates=templates)


@tags.command("predict")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("-o", "--out", required=True, type=click.Path(), help="predicted tags JSONL")
@click.option("--summaries", "summaries_path", required=True, type=click.Path())
@ENDPOINT_OPTION
@click.pass_context
def tags_predict(ctx, manifest, out, summaries_path, endpoint):
    """Predict tags: tagless summary, then keyword extraction."""
    loaded = _load(manifest)
    gateway = _gateway(ctx, endpoint)
    templates = PromptTemplates()
    store = SummaryStore(summaries_path)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n_err = 0
    with out_path.open("w", encoding="utf-8") as fh:
        for rec in loaded:
            ctx_data = tagging_mod.build_enriched_context(
                gateway, templates, rec, loaded.image_file(rec), expand=False
            )
            try:
                predicted = tagging_mod.predict_tags(
                    gateway, templates, rec, ctx_data, store, loaded.image_file(rec)
                )
            except TaggingError as exc:
                click.echo(f"{rec.id}: {exc}", err=True)
                n_err += 1
                continue
            fh.write(json.dumps({"id": rec.id, "tags": predicted},
                                sort_keys=True, ensure_ascii=False) + "\n")
    click.echo(f"predicted tags for {len(loaded) - n_err}/{len(loaded)} records -> {out}")
    _manifest(ctx, [out_path, Path(summaries_path)], templates=templates)


@tags.command("export-finetune")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--summaries", "summaries_path", required=True, type=click.Path(exists=True))
@click.option("--task", required=True, type=click.Choice(["summary", "tags"]))
@click.option("-o", "--out", required=True, type=click.Path())
@click.pass_context
def tags_export(ctx, manifest, summaries_path, task, out):
    """Export {input, target} training records for the train split."""
    loaded = _load(manifest)
    templates = PromptTemplates()
    store = SummaryStore(summaries_path)
    report = tagging_mod.export_finetune_data(loaded, store, task, out, templates)
    click.echo(f"exported {report.n_exported} records ({report.n_skipped} skipped) -> {out}")
    _manifest(ctx, [Path(out)], templates=templates)


# ================================================================= exemplar

@cli.group("exemplar")
def exemplar_group() -> None:
    """Exemplar-selection utilities."""


@exemplar_group.command("tune-alpha")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--stage", default="I", type=click.Choice(["I", "II"]), show_default=True)
@click.option("--kind", default="image_gt_combined", show_default=True,
              type=click.Choice(list(exemplar_mod.COMBINED_KINDS)))
@click.option("--k", default=2, show_default=True)
@click.option("--model", "model_id", default=None, help="defaults to the configured chat model")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--predicted-tags", "predicted_path", type=click.Path(exists=True), default=None)
@click.option("--no-images", is_flag=True, help="text-only prompts and similarity")
@ENDPOINT_OPTION
@click.pass_context
def exemplar_tune_alpha(ctx, manifest, stage, kind, k, model_id, out_dir,
                        predicted_path, no_images, endpoint):
    """Grid-search alpha on the test split against the train pool."""
    loaded = _load(manifest)
    gateway = _gateway(ctx, endpoint, corpus=loaded, stage=stage)
    templates = PromptTemplates()
    config = detect_mod.DetectionConfig(
        stage=stage,
        strategy=SelectionStrategy(kind=kind, k=k, alpha=0.5),
        model_id=model_id or gateway.config.chat_model,
        include_images=not no_images,
    )
    validation = detect_mod.eligible_test_posts(loaded, stage)
    pool = [r for r in loaded if r.split == "train"]
    predicted = _read_predicted(predicted_path)
    objective = detect_mod.make_alpha_objective(
        config, validation, pool, gateway, templates, Path(out_dir) / "runs",
        predicted_tags=predicted, corpus_root=loaded.root,
    )
    table_path = Path(out_dir) / "alpha_table.jsonl"
    result = exemplar_mod.tune_alpha(objective, table_path=table_path)
    click.echo(f"best alpha: {result.best_alpha} (table -> {table_path})")
    _manifest(ctx, [table_path], templates=templates)


def _read_predicted(path: str | None) -> dict[str, list[str]] | None:
    if path is None:
        return None
    predicted = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            predicted[obj["id"]] = list(obj["tags"])
    return predicted


# ================================================================= detect

@cli.group("detect")
def detect_group() -> None:
    """Stage I/II classification benchmarks."""


@detect_group.command("run")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--stage", required=True, type=click.Choice(["I", "II"]))
@click.option("--strategy", "kind", default="random", show_default=True,
              type=click.Choice(list(exemplar_mod.KINDS)))
@click.option("--k", default=2, show_default=True, type=int,
              help="shot count (the benchmarks use 2 or 4)")
@click.option("--alpha", default=None, type=float)
@click.option("--seed", default=None, type=int, help="seed for the random strategy")
@click.option("--model", "model_id", default=None)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--predicted-tags", "predicted_path", type=click.Path(exists=True), default=None)
@click.option("--policy", default="strict", type=click.Choice(["strict", "drop"]), show_default=True)
@click.option("--no-images", is_flag=True)
@ENDPOINT_OPTION
@click.pass_context
def detect_run(ctx, manifest, stage, kind, k, alpha, seed, model_id,
               out_dir, predicted_path, policy, no_images, endpoint):
    """Run a Stage I/II detection benchmark over the test split."""
    loaded = _load(manifest)
    gateway = _gateway(ctx, endpoint, corpus=loaded, stage=stage)
    templates = PromptTemplates()
    strategy_kwargs: dict = {"kind": kind, "k": k}
    if kind in exemplar_mod.COMBINED_KINDS:
        strategy_kwargs["alpha"] = alpha if alpha is not None else 0.5
    if kind == exemplar_mod.RANDOM:
        strategy_kwargs["seed"] = seed if seed is not None else 0
    config = detect_mod.DetectionConfig(
        stage=stage,
        strategy=SelectionStrategy(**strategy_kwargs),
        model_id=model_id or gateway.config.chat_model,
        unparseable_policy=policy,
        include_images=not no_images,
    )
    result = detect_mod.run_benchmark(
        config, loaded, gateway, templates, out_dir,
        predicted_tags=_read_predicted(predicted_path),
    )
    click.echo(f"macro-F1: {result.report.metrics['macro_f1']:.2f} "
               f"({result.n_eval} samples, {result.n_failures} failures"
               f"{'' if result.report.valid else ', RUN INVALID'})")
    click.echo(f"predictions -> {result.predictions_path}")
    _manifest(ctx, [result.predictions_path, result.report_path],
              seeds={"strategy": config.strategy.seed}, templates=templates)


# ================================================================= eval

@cli.group("eval")
def eval_group() -> None:
    """Evaluation reports: tags, summaries, agreement, co-occurrence, top tags."""


@eval_group.command("tags")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--pred", "predicted_path", required=True, type=click.Path(exists=True))
@click.option("--method", default="semantic", show_default=True,
              type=click.Choice(["semantic", "token_f1", "conceptnet"]))
@click.option("--expanded", is_flag=True)
@FORMAT_OPTION
@ENDPOINT_OPTION
@click.pass_context
def eval_tags(ctx, manifest, predicted_path, method, expanded, fmt, endpoint):
    """Mean-of-max similarity between ground-truth and predicted tags."""
    loaded = _load(manifest)
    gateway = _gateway(ctx, endpoint)
    predicted = _read_predicted(predicted_path) or {}
    items = [(r.id, list(r.tags), predicted.get(r.id, [])) for r in loaded if r.split == "test"]
    if not items:
        items = [(r.id, list(r.tags), predicted.get(r.id, [])) for r in loaded]
    report = corpus_tag_similarity(items, method, expanded, gateway=gateway)
    rows = [{"method": report.method, "expanded": report.expanded,
             "corpus_score": round(report.scaled_mean, 2), "n_posts": len(report.per_post)}]
    _emit(rows, fmt)


@eval_group.command("summaries")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True),
              help="JSONL of {candidate, reference}")
@click.option("--sbert/--no-sbert", default=False, show_default=True)
@FORMAT_OPTION
@ENDPOINT_OPTION
@click.pass_context
def eval_summaries(ctx, pairs_path, sbert, fmt, endpoint):
    """BLEU, chrF, ROUGE-L, METEOR-lite (and optional embedding cosine)."""
    pairs = [json.loads(line) for line in Path(pairs_path).read_text().splitlines() if line.strip()]
    if not pairs:
        raise click.UsageError("no pairs to score")
    gateway = _gateway(ctx, endpoint) if sbert else None
    totals = {"bleu": 0.0, "chrf": 0.0, "rouge_l": 0.0, "meteor": 0.0, "sbert": 0.0}
    for pair in pairs:
        c, r = pair["candidate"], pair["reference"]
        totals["bleu"] += bleu(c, r)
        totals["chrf"] += chrf(c, r)
        totals["rouge_l"] += rouge_l(c, r)
        totals["meteor"] += meteor_lite(c, r)
        if gateway is not None:
            totals["sbert"] += sbert_cosine(c, r, lambda t: gateway.embed_text(t))
    n = len(pairs)
    row = {k: round(v / n, 4) for k, v in totals.items() if k != "sbert" or gateway}
    row["n_pairs"] = n
    _emit([row], fmt)


@eval_group.command("agreement")
@click.option("--db", "db_path", required=True, type=click.Path(exists=True))
@click.option("--stage", required=True, type=click.Choice(["I", "II"]))
@FORMAT_OPTION
def eval_agreement(db_path, stage, fmt):
    """Fleiss' kappa over the annotation store."""
    store = AnnotationStore(db_path)
    try:
        report = store.agreement(stage)
    finally:
        store.close()
    _emit([{"stage": stage, "kappa": round(report.kappa, 4),
            "n_items": report.n_items, "n_raters": report.n_raters}], fmt)


@eval_group.command("cooccur")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--min-count", default=2, show_default=True)
@click.option("-n", "top_n", default=30, show_default=True)
@FORMAT_OPTION
def eval_cooccur(manifest, min_count, top_n, fmt):
    """Most frequent lemmatized tag pairs."""
    loaded = _load(manifest)
    ranked = cooccurrence(loaded, min_count=min_count)[:top_n]
    _emit([{"tag_a": a, "tag_b": b, "count": n} for (a, b), n in ranked], fmt)


@eval_group.command("top-tags")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--label", required=True,
              type=click.Choice(["toxic", "normal", "hateful", "dangerous", "offensive"]))
@click.option("-n", "top_n", default=30, show_default=True)
@FORMAT_OPTION
def eval_top_tags(manifest, label, top_n, fmt):
    """Most frequent tags within one class."""
    loaded = _load(manifest)
    _emit([{"tag": t, "count": n} for t, n in top_tags(loaded, label, top_n)], fmt)


# ================================================================= annotate

@cli.group()
def annotate() -> None:
    """Annotation service: serve, batch, finalize."""


@annotate.command("serve")
@click.option("--db", "db_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None,
              help="preload corpus samples into the store")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
@click.option("--timezone", "tz", default="UTC", show_default=True)
@click.option("--ui-dir", type=click.Path(), default=None, help="built browser UI directory")
def annotate_serve(db_path, manifest_path, host, port, tz, ui_dir):
    """Run the annotation HTTP service."""
    import uvicorn

    store = AnnotationStore(db_path, timezone=tz)
    media_root = None
    if manifest_path:
        loaded = _load(manifest_path)
        media_root = loaded.root
        for rec in loaded:
            store.add_post(rec)
        click.echo(f"loaded {len(loaded)} samples into {db_path}")
    app = create_app(store, media_root=media_root, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@annotate.command("batch")
@click.option("--db", "db_path", required=True, type=click.Path())
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True),
              help="JSON: {stage, annotators: [{id, handle, daily_cap}], "
                   "assignments: [{sample, annotators: [a, b, c]}]}")
def annotate_batch(db_path, plan_path):
    """Register annotators and queue a batch from a plan file."""
    plan = json.loads(Path(plan_path).read_text(encoding="utf-8"))
    store = AnnotationStore(db_path)
    try:
        for profile in plan.get("annotators", []):
            store.add_annotator(AnnotatorProfile(
                id=profile["id"], handle=profile["handle"],
                daily_cap=profile.get("daily_cap", 50),
            ))
        result = store.create_batch(
            plan["stage"], [(a["sample"], a["annotators"]) for a in plan["assignments"]]
        )
    finally:
        store.close()
    click.echo(json.dumps(result, sort_keys=True))


@annotate.command("finalize")
@click.option("--db", "db_path", required=True, type=click.Path(exists=True))
@click.option("--stage", required=True, type=click.Choice(["I", "II"]))
@click.option("-o", "--out", type=click.Path(), default=None,
              help="write finalized labels as JSONL")
@click.pass_context
def annotate_finalize(ctx, db_path, stage, out):
    """Majority-vote finalization for a stage."""
    store = AnnotationStore(db_path)
    try:
        result = store.finalize(stage)
    finally:
        store.close()
    counts: dict[str, int] = {}
    for label in result["finalized"].values():
        counts[label] = counts.get(label, 0) + 1
    click.echo(json.dumps({"counts": counts, "undecided": result["undecided"]}, sort_keys=True))
    if out:
        out_path = Path(out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with out_path.open("w", encoding="utf-8") as fh:
            for sample_id in sorted(result["finalized"]):
                fh.write(json.dumps({"sample_id": sample_id, "stage": stage,
                                     "label": result["finalized"][sample_id]}) + "\n")
        _manifest(ctx, [out_path])


# ================================================================= entry point

def main(argv: list[str] | None = None) -> int:
    try:
        cli(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except (CorpusError, StoreError, TaggingError, ExemplarError,
            detect_mod.DetectError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except GatewayError as exc:
        click.echo(f"external service error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
