import json
from pathlib import Path

import pytest
from PIL import Image

from memeguard.corpus import Corpus, PostRecord


def make_image(path: Path, seed: int = 0, size: tuple[int, int] = (32, 32)) -> Path:
    """Write a small deterministic RGB image whose content varies with seed."""
    img = Image.new("RGB", size)
    px = img.load()
    for x in range(size[0]):
        for y in range(size[1]):
            v = (x * 7 + y * 13 + seed * 31) % 256
            px[x, y] = (v, (v * 3 + seed) % 256, (x * y + seed) % 256)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
    return path


def make_record(i: int, **overrides) -> PostRecord:
    fields = dict(
        id=f"p{i:04d}",
        image_path=f"images/p{i:04d}.png",
        title=f"title {i}",
        ocr_text=f"ocr text {i}",
        tags=(f"tag{i % 5}", f"tag{i % 3}x"),
        comment_count=2 + i % 4,
        stream="dark_humour",
    )
    fields.update(overrides)
    return PostRecord(**fields)


def write_manifest(root: Path, records, with_images: bool = True) -> Path:
    manifest = root / "manifest.jsonl"
    root.mkdir(parents=True, exist_ok=True)
    with manifest.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
            if with_images:
                make_image(root / rec.image_path, seed=hash(rec.id) % 1000)
    return manifest


@pytest.fixture
def tiny_corpus(tmp_path):
    records = [make_record(i) for i in range(8)]
    manifest = write_manifest(tmp_path, records)
    return Corpus(records=tuple(records), root=manifest.parent)
