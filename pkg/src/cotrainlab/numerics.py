"""Dense numerical kernels shared by every training loop.

Everything here is plain float64 numpy: the simplex map, cross-entropy,
bias-corrected Adam, the reduce-on-plateau schedule, the renormalized
element-wise product used for joint two-view prediction, and the gradient
dot product that scales the meta teacher update.

All functions are pure except :func:`adam_step` and :func:`plateau_update`,
which mutate only the state object they are handed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

# Probabilities are clamped to this floor before any log.
LOG_CLAMP = 1e-12


def softmax(logits):
    """Map raw scores onto the probability simplex.

    Accepts a single score vector or a batch (rowwise). The maximum is
    subtracted before exponentiation, so any finite input is safe.

    Parameters
    ----------
    logits : array-like, shape (K,) or (n, K)

    Returns
    -------
    ndarray, same shape, rows summing to 1.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise DimensionError("softmax: empty input")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax: non-finite logits")
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(target, prediction):
    """Mean cross-entropy of predictions against hard or soft targets.

    Parameters
    ----------
    target : int, int array of shape (n,), or distribution array matching
        ``prediction``. Integer targets are class indices; float targets
        are treated as fixed distributions.
    prediction : array-like, shape (K,) or (n, K), rows on the simplex.

    Returns
    -------
    float
        Mean loss over the batch (a single row counts as a batch of one).
    """
    p = np.asarray(prediction, dtype=np.float64)
    pb = np.atleast_2d(p)
    n, k = pb.shape
    logp = np.log(np.maximum(pb, LOG_CLAMP))

    t = np.asarray(target)
    if t.dtype.kind in "iu":
        idx = np.atleast_1d(t).astype(np.int64)
        if idx.size == 1 and n > 1:
            idx = np.full(n, idx[0])
        if idx.shape != (n,):
            raise DimensionError(
                f"cross_entropy: {idx.size} targets for batch of {n}")
        if np.any(idx < 0) or np.any(idx >= k):
            raise DimensionError(
                f"cross_entropy: class index out of range for K={k}")
        return float(-logp[np.arange(n), idx].mean())

    tb = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if tb.shape != pb.shape:
        raise DimensionError(
            f"cross_entropy: target shape {tb.shape} vs prediction {pb.shape}")
    return float(-(tb * logp).sum(axis=1).mean())


def mse(target, prediction):
    """Mean squared error over all entries of a batch."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(prediction, dtype=np.float64)
    if t.shape != p.shape:
        raise DimensionError(f"mse: target shape {t.shape} vs prediction {p.shape}")
    return float(np.mean((p - t) ** 2))


@dataclass
class AdamState:
    """Per-parameter-vector Adam accumulators.

    Defaults follow the standard recipe: beta1=0.9, beta2=0.999,
    base learning rate 1e-4.
    """

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    base_lr: float = 1e-4

    @classmethod
    def for_size(cls, n, *, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(m=np.zeros(n), v=np.zeros(n), t=0, beta1=beta1,
                   beta2=beta2, epsilon=epsilon, base_lr=lr)

    def copy(self):
        return AdamState(m=self.m.copy(), v=self.v.copy(), t=self.t,
                         beta1=self.beta1, beta2=self.beta2,
                         epsilon=self.epsilon, base_lr=self.base_lr)


def adam_step(params, grads, state, lr=None):
    """One bias-corrected Adam update.

    Parameters
    ----------
    params, grads : 1-D float arrays of equal length.
    state : AdamState, mutated in place (moments and step counter).
    lr : optional learning-rate override (e.g. from a schedule); defaults
        to ``state.base_lr``.

    Returns
    -------
    ndarray
        The updated parameter vector (a new array).
    """
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 1:
        raise DimensionError(
            f"adam_step: params {p.shape} vs grads {g.shape}")
    if state.m.shape != p.shape:
        raise DimensionError(
            f"adam_step: state sized {state.m.shape} vs params {p.shape}")
    step_lr = state.base_lr if lr is None else lr
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return p - step_lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class PlateauSchedule:
    """Reduce-on-plateau learning rate, stepped once per training step.

    The monitored quantity is a loss (lower is better). A strict
    improvement over the best seen value resets the stale counter;
    otherwise the counter grows, and on reaching ``patience`` the rate
    is multiplied by ``factor`` and the counter resets.
    """

    patience: int = 10
    factor: float = 0.5
    current_lr: float = 1e-4
    best_metric: float = field(default=math.inf)
    stale_steps: int = 0

    def copy(self):
        return PlateauSchedule(patience=self.patience, factor=self.factor,
                               current_lr=self.current_lr,
                               best_metric=self.best_metric,
                               stale_steps=self.stale_steps)


def plateau_update(sched, metric):
    """Advance a PlateauSchedule with one monitored loss value."""
    if not math.isfinite(metric):
        raise NumericError(f"plateau_update: non-finite metric {metric!r}")
    if metric < sched.best_metric:
        sched.best_metric = metric
        sched.stale_steps = 0
    else:
        sched.stale_steps += 1
        if sched.stale_steps >= sched.patience:
            sched.current_lr *= sched.factor
            sched.stale_steps = 0
    return sched


def hadamard_normalize(p, q):
    """L1-renormalized element-wise product of two probability vectors.

    This is the joint prediction of two view models: rows where the
    product vanishes entirely fall back to the uniform distribution
    (with a warning) rather than erroring, since both factors being
    mutually exclusive is a degenerate but reachable state.

    Accepts single vectors or batches; see :func:`hadamard_rows` for the
    batch kernel that also reports which rows degenerated.
    """
    out, degenerate = hadamard_rows(np.atleast_2d(p), np.atleast_2d(q))
    if degenerate.any():
        warnings.warn(
            f"hadamard_normalize: {int(degenerate.sum())} degenerate "
            "all-zero product row(s), fell back to uniform",
            RuntimeWarning, stacklevel=2)
    return out[0] if np.asarray(p).ndim == 1 else out


def hadamard_rows(P, Q):
    """Rowwise renormalized Hadamard product with degeneracy mask.

    Returns ``(R, degenerate)`` where ``R`` rows sum to 1 and
    ``degenerate`` flags rows whose raw product was all zero (those rows
    are uniform in ``R``).
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise DimensionError(f"hadamard: shapes {P.shape} vs {Q.shape}")
    prod = P * Q
    norm = prod.sum(axis=1, keepdims=True)
    degenerate = norm[:, 0] == 0.0
    k = P.shape[1]
    if degenerate.any():
        prod = prod.copy()
        prod[degenerate] = 1.0 / k
        norm = prod.sum(axis=1, keepdims=True)
    return prod / norm, degenerate


def grad_dot(g1, g2):
    """Dot product of two flattened gradients over the same parameters."""
    a = np.asarray(g1, dtype=np.float64).ravel()
    b = np.asarray(g2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"grad_dot: lengths {a.size} vs {b.size}")
    return float(a @ b)
