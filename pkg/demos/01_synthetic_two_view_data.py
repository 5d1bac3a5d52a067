#!/usr/bin/env python3
"""Build a two-view dataset, write it to disk, and sanity-check it.

Two "views" are two embeddings of the same instances. The synthetic
generator draws one Gaussian mean per class and view, then adds
independent noise per view, so the views are conditionally independent
given the class: exactly the regime co-training assumes.
"""

import os
import tempfile

import numpy as np

from cotrainlab import (SplitSpec, SyntheticSpec, generate_synthetic,
                        load_view, nearest_mean_accuracy, save_view,
                        stratified_split_indices)

# ------------------------------------------------------------------
# 1. Generate: 10 classes, 16-d views, mild noise
# ------------------------------------------------------------------
spec = SyntheticSpec(classes=10, d1=16, d2=16, separation=4.0, noise=1.0,
                     n_labeled=200, n_unlabeled=2000, n_test=1000, seed=13)
data = generate_synthetic(spec)
print(f"labeled pool:   {data.labeled.n} instances")
print(f"unlabeled pool: {data.unlabeled.n} instances")
print(f"test set:       {data.test.n} instances")

# The true class means give a brute-force reference classifier. Its
# accuracy bounds what any probe can do on a single view.
for name, means, view in (("view1", data.means1, data.test.view1),
                          ("view2", data.means2, data.test.view2)):
    print(f"nearest-true-mean accuracy on {name}: "
          f"{nearest_mean_accuracy(means, view):.1f}%")

# ------------------------------------------------------------------
# 2. Round-trip through the binary view format
# ------------------------------------------------------------------
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "view1_test.embv")
    save_view(data.test.view1, path)
    back = load_view(path)
    assert np.array_equal(back.embeddings, data.test.view1.embeddings)
    assert np.array_equal(back.labels, data.test.view1.labels)
    print(f"EMBVIEW1 round trip: {os.path.getsize(path)} bytes, bit-exact")

# ------------------------------------------------------------------
# 3. Stratified subsetting with the standard seed
# ------------------------------------------------------------------
sel, rest = stratified_split_indices(data.test.labels, SplitSpec(0.1, seed=13))
counts = np.bincount(data.test.labels[sel], minlength=10)
print(f"10% stratified split: {sel.size} rows, per-class counts {counts.tolist()}")

# ------------------------------------------------------------------
# 4. Conditional independence, empirically
# ------------------------------------------------------------------
# Within one class, the two views' fluctuations around their class means
# should be uncorrelated. The largest cross-covariance entry shrinks
# like 1/sqrt(n).
y = data.unlabeled.labels
rows = np.flatnonzero(y == 0)
a = data.unlabeled.view1.embeddings[rows].astype(float)
b = data.unlabeled.view2.embeddings[rows].astype(float)
a -= a.mean(axis=0)
b -= b.mean(axis=0)
cross = np.abs(a.T @ b / rows.size).max()
print(f"max |cross-covariance| within class 0: {cross:.4f} "
      f"(bound 5/sqrt(n) = {5 / np.sqrt(rows.size):.4f})")
