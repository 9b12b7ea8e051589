#!/usr/bin/env python3
"""Regenerate the frozen text-metric oracle at tests/data/textgen_oracle.json.

BLEU and chrF expectations come from an upstream sacrebleu source file
(https://github.com/mjpost/sacrebleu, v1.4.x single-file layout), loaded from
--sacrebleu PATH so this package never depends on it at runtime. ROUGE-L
expectations come from a memoized-recursion LCS written here, deliberately a
different algorithm from the package's iterative DP.

Run once; the JSON output is committed and the test suite treats it as frozen.

    python3 scripts/make_textgen_oracle.py --sacrebleu /path/to/sacrebleu.py
"""

from __future__ import annotations

import argparse
import importlib.util
import json
import sys
import types
from functools import lru_cache
from pathlib import Path

# Candidate/reference pairs: identity, near-identity, reordering, partial
# overlap, disjoint vocabulary, and length mismatches.
PAIRS = [
    ("a man pointing at a burning building", "a man pointing at a burning building"),
    ("the cat sat on the mat", "the cat sat on the mat"),
    ("sneakers with a historical dictator theme", "trainers themed around a historical dictator"),
    ("twin towers jenga joke about 9/11", "a jenga tower joke referencing the twin towers"),
    ("dark humour meme about cannibalism at a cafe", "cafe menu meme joking about cannibalism"),
    ("sesame street characters in a dangerous situation", "ernie and bert depicted doing something dangerous"),
    ("completely unrelated words here", "nothing shared at all between these"),
    ("short one", "a much longer reference sentence that keeps going with many words"),
    ("a political meme mocking a senator over healthcare policy votes", "political meme about a senator and healthcare votes"),
    ("lol this is so funny", "lol this is very funny indeed"),
]


def load_sacrebleu(path: Path):
    # sacrebleu imports portalocker (dataset downloads) and MeCab (the ja
    # tokenizer) at module load; neither is exercised here.
    if "portalocker" not in sys.modules:
        sys.modules["portalocker"] = types.ModuleType("portalocker")
    if "MeCab" not in sys.modules:
        mecab = types.ModuleType("MeCab")

        class _FakeTagger:
            def __init__(self, *args, **kwargs):
                pass

            def dictionary_info(self):
                info = types.SimpleNamespace(size=392126, next=None)
                return info

        mecab.Tagger = _FakeTagger
        sys.modules["MeCab"] = mecab
    spec = importlib.util.spec_from_file_location("sacrebleu_ref", path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def rouge_l_reference(candidate: str, reference: str) -> float:
    hyp = tuple(candidate.split())
    ref = tuple(reference.split())

    @lru_cache(maxsize=None)
    def lcs(i: int, j: int) -> int:
        if i == len(hyp) or j == len(ref):
            return 0
        if hyp[i] == ref[j]:
            return 1 + lcs(i + 1, j + 1)
        return max(lcs(i + 1, j), lcs(i, j + 1))

    length = lcs(0, 0)
    if length == 0 or not hyp or not ref:
        return 0.0
    p = length / len(hyp)
    r = length / len(ref)
    return 2 * p * r / (p + r)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sacrebleu", type=Path, required=True,
                        help="path to an upstream sacrebleu.py (v1.4.x single file)")
    parser.add_argument("--out", type=Path,
                        default=Path(__file__).resolve().parent.parent / "tests" / "data" / "textgen_oracle.json")
    args = parser.parse_args()

    sb = load_sacrebleu(args.sacrebleu)

    entries = []
    for candidate, reference in PAIRS:
        # floor smoothing with 1e-9 == add-epsilon to zero n-gram counts;
        # sacrebleu scores 0-100, our contract is 0-1
        bleu = sb.corpus_bleu(
            candidate, [[reference]],
            smooth_method="floor", smooth_value=1e-9,
            force=True, tokenize="none", use_effective_order=True,
        ).score / 100.0
        chrf = sb.sentence_chrf(candidate, reference).score * 100.0
        entries.append({
            "candidate": candidate,
            "reference": reference,
            "bleu": bleu,
            "chrf": chrf,
            "rouge_l": rouge_l_reference(candidate, reference),
        })

    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps({"pairs": entries}, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(entries)} oracle entries to {args.out}")


if __name__ == "__main__":
    main()
