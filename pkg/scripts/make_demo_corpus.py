#!/usr/bin/env python3
"""Build a small synthetic labeled corpus (manifest + images) for demos and
smoke runs. The posts carry themed tags and two-stage labels so every CLI
verb has something to chew on.

    python3 scripts/make_demo_corpus.py --out demo_corpus --n 60 --seed 7
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

from PIL import Image

THEMES = {
    "hateful": ["9/11", "nazi", "adolf hitler", "racist", "alabama"],
    "dangerous": ["school shooting", "sesame street", "sonic the hedgehog", "cannibalism", "murder"],
    "offensive": ["cursed", "nsfw", "dark humour joke", "insult"],
    "normal": ["lol", "cats", "monday", "relatable", "wholesome"],
}


def make_image(path: Path, seed: int) -> None:
    rng = random.Random(seed)
    img = Image.new("RGB", (48, 48))
    px = img.load()
    base = rng.randrange(256)
    for x in range(48):
        for y in range(48):
            px[x, y] = ((base + x * 5) % 256, (base * 3 + y * 7) % 256, (x * y + base) % 256)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("demo_corpus"))
    parser.add_argument("--n", type=int, default=60)
    parser.add_argument("--test-share", type=float, default=0.25)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    stage2_labels = list(THEMES)[:3]
    manifest = args.out / "manifest.jsonl"
    args.out.mkdir(parents=True, exist_ok=True)
    n_test = int(args.n * args.test_share)
    with manifest.open("w", encoding="utf-8") as fh:
        for i in range(args.n):
            toxic = rng.random() < 0.7
            stage2 = rng.choice(stage2_labels) if toxic else None
            theme = stage2 or "normal"
            tags = rng.sample(THEMES[theme], k=rng.randint(1, 3))
            image_path = f"images/demo{i:04d}.png"
            make_image(args.out / image_path, seed=rng.randrange(10_000))
            record = {
                "id": f"demo{i:04d}",
                "image_path": image_path,
                "title": f"{theme} themed meme {i}",
                "ocr_text": f"overlay text about {tags[0]}",
                "ocr_boxes": [[4, 4, 40, 12]],
                "tags": tags,
                "comment_count": rng.randint(2, 40),
                "stream": rng.choice(["dark_humour", "memes_overload", "politics"]),
                "lens_context_raw": f"{theme.title()} meme -- seen across social feeds",
                "stage1_label": "toxic" if toxic else "normal",
                "split": "test" if i < n_test else "train",
            }
            if stage2:
                record["stage2_label"] = stage2
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
    print(f"wrote {args.n} posts ({n_test} test) to {manifest}")


if __name__ == "__main__":
    main()
