#!/usr/bin/env python3
"""End to end: image folder -> two embedding views -> co-training.

Uses the companion embed-extract tool (install it from embed_extract/)
to build two views of one synthetic image folder with two different
frozen backbones, then trains on the resulting files exactly as one
would on real multi-backbone embeddings.

The images here are random class-colored noise, so absolute accuracy is
not the point; the point is the mechanics: path-ordered extraction keeps
the views aligned, the EMBVIEW1 files parse straight into the training
library, and the whole pipeline runs offline.
"""

import os
import tempfile

import numpy as np
from PIL import Image

from cotrainlab import (CotrainConfig, PairedViews, SplitSpec, load_view,
                        run_cotraining, stratified_split_indices)
from embed_extract import ExtractJob, extract

CLASSES = 3
PER_CLASS = 30

with tempfile.TemporaryDirectory() as tmp:
    img_dir = os.path.join(tmp, "images")
    os.makedirs(img_dir)

    # --------------------------------------------------------------
    # 1. A tiny labeled image folder: class = dominant color channel
    # --------------------------------------------------------------
    rng = np.random.default_rng(13)
    lines = []
    for i in range(CLASSES * PER_CLASS):
        cls = i % CLASSES
        arr = rng.integers(0, 90, size=(70, 70, 3), dtype=np.uint8)
        arr[:, :, cls] += 120
        name = f"img_{i:04d}.png"
        Image.fromarray(arr).save(os.path.join(img_dir, name))
        lines.append(f"{name}\t{cls}")
    label_file = os.path.join(tmp, "labels.tsv")
    with open(label_file, "w") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {CLASSES * PER_CLASS} images in {CLASSES} classes")

    # --------------------------------------------------------------
    # 2. Two frozen backbones give two views of the same instances
    # --------------------------------------------------------------
    paths = {}
    for view, backbone in (("a", "randconv-a-64"), ("b", "randconv-b-96")):
        out = os.path.join(tmp, f"view_{view}.embv")
        manifest = extract(ExtractJob(backbone, img_dir, out,
                                      label_file=label_file))
        paths[view] = out
        print(f"extracted {backbone}: {len(manifest['rows'])} rows "
              f"x {manifest['dim']} dims")

    # --------------------------------------------------------------
    # 3. Load, split, co-train
    # --------------------------------------------------------------
    va = load_view(paths["a"], "randconv-a")
    vb = load_view(paths["b"], "randconv-b")
    paired = PairedViews(va, vb)
    sel, rest = stratified_split_indices(paired.labels, SplitSpec(0.4, seed=13))
    hold = rest[: rest.size // 2]
    test_idx = rest[rest.size // 2:]
    labeled, unlabeled, test = (paired.select(sel), paired.select(hold),
                                paired.select(test_idx))
    config = CotrainConfig(steps_per_iteration=80, k_fraction=0.2,
                           max_iterations=2, batch_size=32,
                           model_kind="linear",
                           opt={"lr": 0.02, "beta1": 0.9, "beta2": 0.999,
                                "epsilon": 1e-8})
    log, state, summary = run_cotraining(labeled, unlabeled, test, config)
    print(f"co-training on extracted views: best joint top-1 "
          f"{summary['best_joint_top1']:.1f}% "
          f"(chance {100 / CLASSES:.1f}%)")
