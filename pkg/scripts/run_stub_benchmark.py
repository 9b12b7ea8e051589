#!/usr/bin/env python3
"""Offline shot-selection experiment: run all six exemplar strategies over a
synthetic corpus against a deterministic stub endpoint and print a macro-F1
comparison table.

Nothing here talks to a network; the chat stub answers from a fixed
pseudo-random policy keyed on the prompt digest, so strategy differences come
purely from which exemplars get selected.

    python3 scripts/run_stub_benchmark.py --corpus demo_corpus --k 2
"""

from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

from memeguard.corpus import load_corpus
from memeguard.detect import DetectionConfig, run_benchmark
from memeguard.exemplar import SelectionStrategy
from memeguard.gateway import GatewayConfig, ModelGateway, StubTransport, canonical_digest
from memeguard.tagging import PromptTemplates

STRATEGIES = [
    ("random", {"seed": 0}),
    ("image", {}),
    ("gt_tags", {}),
    ("pred_tags", {}),
    ("image_gt_combined", {"alpha": 0.5}),
    ("image_pred_combined", {"alpha": 0.5}),
]


def biased_stub_chat(payload: dict) -> str:
    """Answers 'toxic' more often when exemplar tags resemble the query tags;
    crude, but enough to separate the strategies deterministically."""
    digest = canonical_digest("chat", payload).digest
    content = payload["messages"][0]["content"]
    text = content if isinstance(content, str) else content[0]["text"]
    lowered = text.lower()
    toxic_signal = sum(lowered.count(w) for w in ("nazi", "shooting", "cannibal", "cursed", "murder", "racist"))
    normal_signal = sum(lowered.count(w) for w in ("cats", "wholesome", "relatable", "lol", "monday"))
    if toxic_signal != normal_signal:
        return "toxic" if toxic_signal > normal_signal else "normal"
    return "toxic" if int(digest[:8], 16) % 2 else "normal"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus", type=Path, default=Path("demo_corpus"))
    parser.add_argument("--k", type=int, default=2)
    parser.add_argument("--stage", choices=["I", "II"], default="I")
    parser.add_argument("--out-dir", type=Path, default=None)
    args = parser.parse_args()

    corpus, report = load_corpus(args.corpus)
    if report.errors:
        raise SystemExit(f"manifest problems: {report.errors[:3]}")
    # the stub experiment treats ground-truth tags as the "predicted" ones
    predicted = {r.id: list(r.tags) for r in corpus}

    out_dir = args.out_dir or Path(tempfile.mkdtemp(prefix="memeguard-stub-"))
    config = GatewayConfig(cache_dir=out_dir / "cache")
    gateway = ModelGateway(config, transport=StubTransport(chat=biased_stub_chat))
    templates = PromptTemplates()

    print(f"{'strategy':<22}{'macro-F1':>10}{'samples':>10}{'failures':>10}")
    for kind, extra in STRATEGIES:
        detection = DetectionConfig(
            stage=args.stage,
            strategy=SelectionStrategy(kind=kind, k=args.k, **extra),
            model_id="stub-model",
            include_images=False,
        )
        result = run_benchmark(
            detection, corpus, gateway, templates,
            out_dir / kind, predicted_tags=predicted,
        )
        print(f"{kind:<22}{result.report.metrics['macro_f1']:>10.2f}"
              f"{result.n_eval:>10}{result.n_failures:>10}")
    print(f"\nartifacts in {out_dir}")


if __name__ == "__main__":
    main()
