"""EMBVIEW1 writer (and reader, for self-checks).

This module is the extraction tool's half of the byte-level contract
with the training library: magic ``EMBVIEW1``; u32-LE version (1), row
count n, width d, class count K (0 = unlabeled); n*d float32-LE
embeddings row-major; when K > 0, n u32-LE labels follow.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"EMBVIEW1"
VERSION = 1


class EmbviewError(ValueError):
    pass


def encode(embeddings, labels=None, class_count=0):
    """Serialize an embedding matrix (and optional labels) to bytes."""
    emb = np.ascontiguousarray(embeddings, dtype="<f4")
    if emb.ndim != 2 or emb.shape[1] == 0:
        raise EmbviewError(f"embeddings must be (n, d>0), got {emb.shape}")
    if not np.all(np.isfinite(emb)):
        raise EmbviewError("non-finite embedding values")
    n, d = emb.shape
    k = 0
    payload = [MAGIC, struct.pack("<IIII", VERSION, n, d, 0), emb.tobytes()]
    if labels is not None:
        lab = np.asarray(labels)
        if lab.shape != (n,):
            raise EmbviewError(f"labels shape {lab.shape}, expected ({n},)")
        if lab.size and lab.min() < 0:
            raise EmbviewError("negative label")
        k = int(class_count) if class_count else int(lab.max()) + 1
        if lab.size and lab.max() >= k:
            raise EmbviewError(f"label {int(lab.max())} outside [0, {k})")
        payload[1] = struct.pack("<IIII", VERSION, n, d, k)
        payload.append(np.ascontiguousarray(lab, dtype="<u4").tobytes())
    return b"".join(payload)


def decode(blob):
    """Parse bytes back into (embeddings, labels or None, class_count)."""
    if blob[:8] != MAGIC:
        raise EmbviewError(f"bad magic {blob[:8]!r}")
    if len(blob) < 24:
        raise EmbviewError("truncated header")
    version, n, d, k = struct.unpack_from("<IIII", blob, 8)
    if version != VERSION:
        raise EmbviewError(f"unsupported version {version}")
    if d == 0:
        raise EmbviewError("zero embedding width")
    pos = 24
    need = 4 * n * d
    if pos + need > len(blob):
        raise EmbviewError("truncated embedding block")
    emb = np.frombuffer(blob[pos:pos + need], dtype="<f4").reshape(n, d).copy()
    pos += need
    labels = None
    if k > 0:
        if pos + 4 * n > len(blob):
            raise EmbviewError("truncated label block")
        labels = np.frombuffer(blob[pos:pos + 4 * n], dtype="<u4").copy()
        pos += 4 * n
    if pos != len(blob):
        raise EmbviewError("trailing bytes")
    return emb, labels, k
