"""Classifier families trained on frozen embeddings.

Two model families: a linear probe (single affine layer with softmax) and
a dense-skip MLP whose hidden layers each consume the raw input
concatenated with every previous hidden output. Both expose closed-form
``forward``/``backward`` over a flat parameter vector so the training
loops never need autodiff, plus a mean-squared-error variant of the MLP
used by the cross-view translation diagnostic.

Gradients returned by ``backward`` are exact analytic derivatives of the
mean batch loss; the test suite verifies them against central finite
differences.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DimensionError, FormatError, NumericError, StaleTraceError
from .numerics import softmax

CHECKPOINT_MAGIC = b"MCTCKPT1"


class ParamSet:
    """Ordered, named parameter blocks with a flat view.

    ``flatten`` concatenates all blocks into one float64 vector;
    ``set_flat`` writes such a vector back. The two are exact inverses.
    """

    def __init__(self, blocks):
        self.names = [name for name, _ in blocks]
        self.arrays = [np.asarray(a, dtype=np.float64) for _, a in blocks]
        if len(set(self.names)) != len(self.names):
            raise DimensionError("ParamSet: duplicate block names")

    @property
    def size(self):
        return sum(a.size for a in self.arrays)

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise DimensionError(
                f"ParamSet: flat vector length {flat.size}, expected {self.size}")
        offset = 0
        for i, a in enumerate(self.arrays):
            self.arrays[i] = flat[offset:offset + a.size].reshape(a.shape).copy()
            offset += a.size

    def __getitem__(self, name):
        return self.arrays[self.names.index(name)]

    def items(self):
        return list(zip(self.names, self.arrays))


class ForwardTrace:
    """Cached activations from one forward pass.

    Tagged with the parameter version that produced it; ``backward``
    refuses traces that predate a parameter update.
    """

    def __init__(self, version, X, cache):
        self.version = version
        self.X = X
        self.cache = cache


def _uniform_init(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _FlatModel:
    """Shared plumbing: flat parameter access, versioning, checkpoints."""

    def __init__(self, params):
        self.params = params
        self.version = 0

    @property
    def num_params(self):
        return self.params.size

    def get_flat(self):
        return self.params.flatten()

    def set_flat(self, flat):
        self.params.set_flat(flat)
        self.version += 1

    def _check_trace(self, trace):
        if trace.version != self.version:
            raise StaleTraceError(
                f"trace from parameter version {trace.version}, "
                f"model now at {self.version}")

    def predict_proba(self, X):
        return self.forward(X)[0]

    def save_checkpoint(self, path):
        save_checkpoint(self.params, path)

    def load_checkpoint(self, path):
        blocks = dict(load_checkpoint(path))
        for name, current in self.params.items():
            if name not in blocks:
                raise FormatError(f"checkpoint missing block {name!r}")
            flat = blocks.pop(name)
            if flat.size != current.size:
                raise DimensionError(
                    f"checkpoint block {name!r} has {flat.size} values, "
                    f"model expects {current.size}")
            idx = self.params.names.index(name)
            self.params.arrays[idx] = flat.astype(np.float64).reshape(current.shape)
        if blocks:
            raise FormatError(
                f"checkpoint has unexpected blocks {sorted(blocks)}")
        self.version += 1


def _validate_input(X, d):
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != d:
        raise DimensionError(
            f"input shape {X.shape}, expected (n, {d})")
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite entries in input batch")
    return np.asarray(X, dtype=np.float64)


def _targets_to_dist(targets, n, k):
    """Hard class indices or fixed distributions -> (n, K) target matrix."""
    t = np.asarray(targets)
    if t.dtype.kind in "iu":
        idx = np.atleast_1d(t).astype(np.int64)
        if idx.shape != (n,):
            raise DimensionError(f"{idx.size} targets for batch of {n}")
        if np.any(idx < 0) or np.any(idx >= k):
            raise DimensionError(f"class index out of range for K={k}")
        T = np.zeros((n, k))
        T[np.arange(n), idx] = 1.0
        return T
    T = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if T.shape != (n, k):
        raise DimensionError(f"target shape {T.shape}, expected ({n}, {k})")
    return T


class LinearProbe(_FlatModel):
    """Single affine layer with softmax output.

    Parameters
    ----------
    d : input embedding width.
    k : number of classes.
    rng : numpy Generator used for the fan-in-scaled uniform weight init;
        omit for zero weights.
    """

    def __init__(self, d, k, rng=None):
        self.d = d
        self.k = k
        W = np.zeros((k, d)) if rng is None else _uniform_init(rng, (k, d), d)
        super().__init__(ParamSet([("W", W), ("b", np.zeros(k))]))

    def forward(self, X):
        X = _validate_input(X, self.d)
        logits = X @ self.params["W"].T + self.params["b"]
        probs = softmax(logits)
        return probs, ForwardTrace(self.version, X, {"probs": probs})

    def backward(self, trace, targets, weight=1.0):
        """Gradient of ``weight * mean cross-entropy`` as a flat vector."""
        self._check_trace(trace)
        probs = trace.cache["probs"]
        n, k = probs.shape
        T = _targets_to_dist(targets, n, k)
        dlogits = (probs - T) / n
        gW = dlogits.T @ trace.X
        gb = dlogits.sum(axis=0)
        return weight * np.concatenate([gW.ravel(), gb])


class _SkipStack(_FlatModel):
    """Dense-skip hidden stack: layer i sees [x, a_1, ..., a_{i-1}].

    Subclasses attach a head over [x, a_1, ..., a_L].
    """

    def __init__(self, d, out_dim, hidden_width, hidden_layers, rng):
        self.d = d
        self.out_dim = out_dim
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        blocks = []
        in_w = d
        for i in range(hidden_layers):
            blocks.append((f"layer{i + 1}.W",
                           _uniform_init(rng, (hidden_width, in_w), in_w)))
            blocks.append((f"layer{i + 1}.b", np.zeros(hidden_width)))
            in_w += hidden_width
        blocks.append(("head.W", _uniform_init(rng, (out_dim, in_w), in_w)))
        blocks.append(("head.b", np.zeros(out_dim)))
        super().__init__(ParamSet(blocks))

    def input_widths(self):
        """Expected input width of each hidden layer and the head."""
        h = self.hidden_width
        return [self.d + i * h for i in range(self.hidden_layers + 1)]

    def _stack_forward(self, X):
        X = _validate_input(X, self.d)
        concat = X
        zs, activations = [], []
        for i in range(self.hidden_layers):
            W = self.params[f"layer{i + 1}.W"]
            b = self.params[f"layer{i + 1}.b"]
            assert concat.shape[1] == W.shape[1], "skip wiring width mismatch"
            z = concat @ W.T + b
            a = np.maximum(z, 0.0)
            zs.append(z)
            activations.append(a)
            concat = np.concatenate([concat, a], axis=1)
        out = concat @ self.params["head.W"].T + self.params["head.b"]
        return X, zs, activations, concat, out

    def _stack_backward(self, trace, dout):
        """Backprop a head-output gradient through the skip stack."""
        X, zs, activations, concat = (trace.cache[k] for k in
                                      ("X", "zs", "acts", "concat"))
        n = X.shape[0]
        d, h, L = self.d, self.hidden_width, self.hidden_layers
        grads = {}
        grads["head.W"] = dout.T @ concat
        grads["head.b"] = dout.sum(axis=0)
        dconcat = dout @ self.params["head.W"]
        # Slice the concat gradient into per-activation pieces; hidden
        # activations accumulate gradient from every later consumer.
        da = [np.zeros((n, h)) for _ in range(L)]
        for i in range(L):
            da[i] += dconcat[:, d + i * h: d + (i + 1) * h]
        for i in range(L - 1, -1, -1):
            dz = da[i] * (zs[i] > 0)
            layer_in = X if i == 0 else np.concatenate(
                [X] + activations[:i], axis=1)
            grads[f"layer{i + 1}.W"] = dz.T @ layer_in
            grads[f"layer{i + 1}.b"] = dz.sum(axis=0)
            dlayer_in = dz @ self.params[f"layer{i + 1}.W"]
            for j in range(i):
                da[j] += dlayer_in[:, d + j * h: d + (j + 1) * h]
        return np.concatenate(
            [grads[name].ravel() for name in self.params.names])


class SkipMLP(_SkipStack):
    """Dense-skip MLP classifier: hidden relu layers plus a softmax head.

    Defaults to three hidden layers of 1024 units, so with input width d
    the layer inputs are d, d+1024, d+2048 and the head sees d+3072.
    """

    def __init__(self, d, k, rng, hidden_width=1024, hidden_layers=3):
        self.k = k
        super().__init__(d, k, hidden_width, hidden_layers, rng)

    def forward(self, X):
        X, zs, acts, concat, logits = self._stack_forward(X)
        probs = softmax(logits)
        trace = ForwardTrace(self.version, X, {
            "X": X, "zs": zs, "acts": acts, "concat": concat, "probs": probs})
        return probs, trace

    def backward(self, trace, targets, weight=1.0):
        """Gradient of ``weight * mean cross-entropy`` as a flat vector."""
        self._check_trace(trace)
        probs = trace.cache["probs"]
        n, k = probs.shape
        T = _targets_to_dist(targets, n, k)
        dlogits = (probs - T) / n
        return weight * self._stack_backward(trace, dlogits)


class SkipMLPRegressor(_SkipStack):
    """Same dense-skip stack with a linear head trained under MSE.

    Used to translate one embedding view into another; the loss is the
    mean squared error over all output entries. The head starts at zero,
    so the untrained regressor is the constant-zero map and output
    structure only appears where the target actually correlates with the
    input.
    """

    def __init__(self, d, out_dim, rng, hidden_width=1024, hidden_layers=3):
        super().__init__(d, out_dim, hidden_width, hidden_layers, rng)
        idx = self.params.names.index("head.W")
        self.params.arrays[idx] = np.zeros_like(self.params.arrays[idx])

    def forward(self, X):
        X, zs, acts, concat, out = self._stack_forward(X)
        trace = ForwardTrace(self.version, X, {
            "X": X, "zs": zs, "acts": acts, "concat": concat, "out": out})
        return out, trace

    def backward(self, trace, targets, weight=1.0):
        """Gradient of ``weight * mean squared error`` as a flat vector."""
        self._check_trace(trace)
        out = trace.cache["out"]
        T = np.asarray(targets, dtype=np.float64)
        if T.shape != out.shape:
            raise DimensionError(
                f"target shape {T.shape}, expected {out.shape}")
        dout = 2.0 * (out - T) / out.size
        return weight * self._stack_backward(trace, dout)


def predict_hard(probabilities):
    """Rowwise arg max; ties go to the lowest class index."""
    P = np.asarray(probabilities)
    return np.argmax(np.atleast_2d(P), axis=1) if P.ndim > 1 else int(np.argmax(P))


def sample_pseudo_labels(probabilities, rng):
    """Draw one class per row from its categorical distribution.

    Deterministic given the generator state: consumes exactly one uniform
    per row and inverts the cumulative distribution.
    """
    P = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    if np.any(P < 0):
        raise NumericError("sample_pseudo_labels: negative probability")
    cum = np.cumsum(P, axis=1)
    u = rng.random(P.shape[0]) * cum[:, -1]
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, P.shape[1] - 1).astype(np.int64)


def save_checkpoint(params, path):
    """Write parameter blocks in the fixed binary checkpoint layout.

    Magic ``MCTCKPT1``, then per block: u32-LE name length, the name in
    UTF-8, u32-LE element count, and the values as little-endian float32.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, arr in params.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.size))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back as ``[(name, float32 array), ...]``."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    blocks = []
    pos = 8
    while pos < len(data):
        if pos + 4 > len(data):
            raise FormatError("truncated block name length", offset=pos)
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + name_len > len(data):
            raise FormatError("truncated block name", offset=pos)
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 4 > len(data):
            raise FormatError("truncated block size", offset=pos)
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        nbytes = 4 * count
        if pos + nbytes > len(data):
            raise FormatError(f"truncated values for block {name!r}", offset=pos)
        arr = np.frombuffer(data[pos:pos + nbytes], dtype="<f4").copy()
        pos += nbytes
        blocks.append((name, arr))
    return blocks
