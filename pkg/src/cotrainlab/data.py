"""Embedding-view datasets.

A "view" is one frozen embedding of the underlying instances. This module
owns the bit-exact EMBVIEW1 file format, seeded stratified subsetting,
view pairing and concatenation, and a synthetic two-view generator whose
views are conditionally independent given the class by construction,
which makes desk-scale verification of the training loops possible.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, DimensionError, FormatError, NumericError

VIEW_MAGIC = b"EMBVIEW1"
VIEW_VERSION = 1


@dataclass
class ViewDataset:
    """One view's embedding matrix plus optional labels.

    ``class_count`` of zero means unlabeled. Embeddings are stored as
    float32 (matching the on-disk format); training code promotes to
    float64 where needed.
    """

    embeddings: np.ndarray
    labels: np.ndarray | None = None
    class_count: int = 0
    view_name: str = ""

    def __post_init__(self):
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 2:
            raise DimensionError("embeddings must be a 2-D (n, d) array")
        if self.embeddings.shape[1] == 0:
            raise DimensionError("embedding width d must be positive")
        if not np.all(np.isfinite(self.embeddings)):
            raise NumericError("non-finite embedding entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise DimensionError(
                    f"labels shape {self.labels.shape}, expected ({self.n},)")
            if self.class_count <= 0:
                raise DimensionError("labeled dataset needs class_count > 0")
            if self.labels.size and (self.labels.min() < 0
                                     or self.labels.max() >= self.class_count):
                raise DimensionError(
                    f"labels outside [0, {self.class_count})")

    @property
    def n(self):
        return self.embeddings.shape[0]

    @property
    def d(self):
        return self.embeddings.shape[1]

    def select(self, indices):
        """New ViewDataset holding the given rows (labels carried along)."""
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return ViewDataset(self.embeddings[idx], labels,
                           self.class_count, self.view_name)

    def without_labels(self):
        return ViewDataset(self.embeddings, None, 0, self.view_name)


@dataclass
class PairedViews:
    """Two views of the same instances, row i aligned to row i."""

    view1: ViewDataset
    view2: ViewDataset

    def __post_init__(self):
        if self.view1.n != self.view2.n:
            raise AlignmentError(
                f"views hold {self.view1.n} vs {self.view2.n} instances")
        l1, l2 = self.view1.labels, self.view2.labels
        if l1 is not None and l2 is not None and not np.array_equal(l1, l2):
            raise AlignmentError("paired views disagree on labels")

    @property
    def n(self):
        return self.view1.n

    @property
    def labels(self):
        return self.view1.labels if self.view1.labels is not None else self.view2.labels

    def select(self, indices):
        return PairedViews(self.view1.select(indices), self.view2.select(indices))


@dataclass
class SplitSpec:
    """Seeded stratified subset selection."""

    fraction: float
    seed: int = 13
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise DimensionError(f"fraction {self.fraction} outside (0, 1]")


@dataclass
class SyntheticSpec:
    """Two conditionally independent Gaussian views around shared classes.

    Class means are Gaussian draws scaled so their expected norm equals
    ``separation``; each instance adds independent spherical noise per
    view, so the views are conditionally independent given the label by
    construction.
    """

    classes: int = 10
    d1: int = 16
    d2: int = 16
    separation: float = 4.0
    noise: float = 1.0
    n_labeled: int = 200
    n_unlabeled: int = 19800
    n_test: int = 2000
    seed: int = 13

    def __post_init__(self):
        if min(self.classes, self.d1, self.d2,
               self.n_labeled, self.n_unlabeled, self.n_test) <= 0:
            raise DimensionError("all synthetic counts and dims must be positive")
        if self.separation <= 0 or self.noise < 0:
            raise DimensionError("separation must be > 0 and noise >= 0")


@dataclass
class SyntheticViews:
    """Generator output: the three standard pools plus the true means."""

    labeled: PairedViews
    unlabeled: PairedViews
    test: PairedViews
    means1: np.ndarray = field(repr=False)
    means2: np.ndarray = field(repr=False)


def save_view(dataset, path):
    """Write a ViewDataset in the EMBVIEW1 layout.

    Magic ``EMBVIEW1``; u32-LE version, n, d, K (0 = unlabeled); n*d
    float32-LE embeddings row-major; then n u32-LE labels when K > 0.
    """
    k = dataset.class_count if dataset.labels is not None else 0
    with open(path, "wb") as f:
        f.write(VIEW_MAGIC)
        f.write(struct.pack("<IIII", VIEW_VERSION, dataset.n, dataset.d, k))
        f.write(np.ascontiguousarray(dataset.embeddings, dtype="<f4").tobytes())
        if k > 0:
            f.write(np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes())


def load_view(path, view_name=None):
    """Read an EMBVIEW1 file back into a ViewDataset.

    Rejects bad magic, unknown versions, zero width, truncation and
    non-finite payloads, reporting the byte offset of the failure.
    """
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != VIEW_MAGIC:
        raise FormatError(f"bad magic {data[:8]!r} in {path}", offset=0)
    if len(data) < 24:
        raise FormatError("truncated header", offset=len(data))
    version, n, d, k = struct.unpack_from("<IIII", data, 8)
    if version != VIEW_VERSION:
        raise FormatError(f"unsupported version {version}", offset=8)
    if d == 0:
        raise FormatError("embedding width d = 0", offset=16)
    pos = 24
    emb_bytes = 4 * n * d
    if pos + emb_bytes > len(data):
        raise FormatError(
            f"truncated embeddings: want {emb_bytes} bytes for {n}x{d}",
            offset=pos)
    emb = np.frombuffer(data[pos:pos + emb_bytes], dtype="<f4").reshape(n, d)
    pos += emb_bytes
    labels = None
    if k > 0:
        lab_bytes = 4 * n
        if pos + lab_bytes > len(data):
            raise FormatError("truncated label block", offset=pos)
        labels = np.frombuffer(data[pos:pos + lab_bytes], dtype="<u4").astype(np.int64)
        pos += lab_bytes
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", offset=pos)
    if not np.all(np.isfinite(emb)):
        raise NumericError(f"non-finite embeddings in {path}")
    name = view_name if view_name is not None else str(path)
    return ViewDataset(emb.copy(), labels, int(k), name)


def stratified_split_indices(labels, spec):
    """Deterministic stratified index split.

    Returns ``(selected, remainder)`` index arrays. Per class,
    ``round(fraction * count)`` rows are drawn, floored at one so no
    class ever drops out of the selection entirely.
    """
    labels = np.asarray(labels)
    n = labels.size
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    if not spec.stratified:
        perm = rng.permutation(n)
        take = max(1, int(round(spec.fraction * n)))
        sel = np.sort(perm[:take])
        rest = np.sort(perm[take:])
        return sel, rest
    selected = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        take = int(round(spec.fraction * idx.size))
        if take < 1:
            warnings.warn(
                f"class {cls}: fraction {spec.fraction} yields zero samples, "
                "flooring at one", RuntimeWarning, stacklevel=2)
            take = 1
        perm = rng.permutation(idx.size)
        selected.append(idx[perm[:take]])
    sel = np.sort(np.concatenate(selected))
    mask = np.ones(n, dtype=bool)
    mask[sel] = False
    return sel, np.flatnonzero(mask)


def stratified_split(dataset, spec):
    """Split a labeled ViewDataset into (selected subset, remainder)."""
    if dataset.labels is None:
        raise DimensionError("stratified_split needs labels")
    sel, rest = stratified_split_indices(dataset.labels, spec)
    return dataset.select(sel), dataset.select(rest)


def concat_views(a, b):
    """Feature-concatenate two aligned views into one wider view."""
    if a.n != b.n:
        raise AlignmentError(f"cannot concat views with {a.n} vs {b.n} rows")
    la, lb = a.labels, b.labels
    if la is not None and lb is not None and not np.array_equal(la, lb):
        raise AlignmentError("label mismatch between views to concatenate")
    labels = la if la is not None else lb
    k = a.class_count if la is not None else b.class_count
    name = f"{a.view_name}|{b.view_name}" if a.view_name or b.view_name else ""
    emb = np.concatenate([a.embeddings, b.embeddings], axis=1)
    return ViewDataset(emb, labels, k if labels is not None else 0, name)


def _balanced_labels(n, k, rng):
    y = np.arange(n) % k
    return y[rng.permutation(n)]


def generate_synthetic(spec):
    """Draw a paired two-view dataset from the synthetic model.

    Per class y and view v, a mean vector is drawn once; every instance
    of class y in view v is that mean plus independent Gaussian noise.
    Labels are exactly class-balanced. Fully determined by ``spec.seed``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    means1 = spec.separation * rng.standard_normal((spec.classes, spec.d1)) / np.sqrt(spec.d1)
    means2 = spec.separation * rng.standard_normal((spec.classes, spec.d2)) / np.sqrt(spec.d2)

    def draw(n):
        y = _balanced_labels(n, spec.classes, rng)
        x1 = means1[y] + spec.noise * rng.standard_normal((n, spec.d1))
        x2 = means2[y] + spec.noise * rng.standard_normal((n, spec.d2))
        return PairedViews(
            ViewDataset(x1, y, spec.classes, "synthetic-view1"),
            ViewDataset(x2, y, spec.classes, "synthetic-view2"))

    labeled = draw(spec.n_labeled)
    unlabeled = draw(spec.n_unlabeled)
    test = draw(spec.n_test)
    return SyntheticViews(labeled, unlabeled, test, means1, means2)


def nearest_mean_accuracy(means, view):
    """Top-1 accuracy (percent) of the distance-to-true-mean classifier."""
    X = np.asarray(view.embeddings, dtype=np.float64)
    d2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    pred = d2.argmin(axis=1)
    return 100.0 * float(np.mean(pred == view.labels))
