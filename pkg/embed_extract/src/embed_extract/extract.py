"""Run a frozen backbone over an image folder and write an EMBVIEW1 file.

Row order is the lexicographic order of relative image paths: that is
the alignment contract that lets two extractions over the same folder
act as complementary views. Writing is atomic (temp file then rename)
and a JSON manifest next to the output records the backbone, its
preprocessing, and the exact row order.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .embview import encode
from .registry import build_backbone

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")


class ExtractError(RuntimeError):
    pass


@dataclass
class ExtractJob:
    backbone: str
    image_dir: str
    output_path: str
    label_file: str | None = None
    batch_size: int = 32
    on_error: str = "abort"          # or "skip"

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ExtractError("batch_size must be positive")
        if self.on_error not in ("abort", "skip"):
            raise ExtractError(f"on_error must be abort or skip, "
                               f"got {self.on_error!r}")


def list_images(image_dir):
    """Relative image paths under the directory, lexicographically sorted."""
    if not os.path.isdir(image_dir):
        raise ExtractError(f"not a directory: {image_dir}")
    found = []
    for root, _, files in os.walk(image_dir):
        for name in files:
            if name.lower().endswith(IMAGE_EXTENSIONS):
                full = os.path.join(root, name)
                found.append(os.path.relpath(full, image_dir))
    if not found:
        raise ExtractError(f"no images under {image_dir}")
    return sorted(found)


def read_label_file(path):
    """Parse `relative/path<TAB>class_index` lines into a dict."""
    labels = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ExtractError(
                    f"{path}:{lineno}: expected 'path<TAB>class_index'")
            rel, idx = parts
            try:
                value = int(idx)
            except ValueError:
                raise ExtractError(f"{path}:{lineno}: bad class index {idx!r}")
            if value < 0:
                raise ExtractError(f"{path}:{lineno}: negative class index")
            if rel in labels:
                raise ExtractError(f"{path}:{lineno}: duplicate entry {rel!r}")
            labels[rel] = value
    return labels


def extract(job):
    """Execute one extraction job; returns the manifest dict."""
    backbone = build_backbone(job.backbone)
    paths = list_images(job.image_dir)

    label_map = None
    if job.label_file:
        label_map = read_label_file(job.label_file)
        missing = [p for p in paths if p not in label_map]
        if missing:
            raise ExtractError(
                f"label file misses {len(missing)} image(s), first: "
                f"{missing[0]!r}")

    rows = []
    kept = []
    batch = []

    def flush():
        if not batch:
            return
        with torch.no_grad():
            out = backbone.model(torch.stack(batch))
        rows.append(out.numpy().astype(np.float32))
        batch.clear()

    for rel in paths:
        full = os.path.join(job.image_dir, rel)
        try:
            with Image.open(full) as img:
                tensor = backbone.preprocess(img.convert("RGB"))
        except Exception as e:
            if job.on_error == "skip":
                print(f"skipping unreadable image {rel}: {e}", file=sys.stderr)
                continue
            raise ExtractError(f"unreadable image {rel}: {e}") from e
        kept.append(rel)
        batch.append(tensor)
        if len(batch) >= job.batch_size:
            flush()
    flush()
    if not kept:
        raise ExtractError("no readable images")

    embeddings = np.concatenate(rows, axis=0)
    labels = None
    class_count = 0
    if label_map is not None:
        labels = np.array([label_map[p] for p in kept], dtype=np.uint32)
        class_count = int(labels.max()) + 1
    blob = encode(embeddings, labels, class_count)

    tmp = job.output_path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, job.output_path)

    manifest = {
        "backbone": backbone.name,
        "dim": backbone.dim,
        "preprocessing": backbone.description,
        "image_dir": os.path.abspath(job.image_dir),
        "rows": kept,
        "labeled": labels is not None,
        "class_count": class_count,
        "skipped": len(paths) - len(kept),
    }
    with open(job.output_path + ".manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
