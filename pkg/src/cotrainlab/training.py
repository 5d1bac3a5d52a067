"""Shared supervised training machinery.

Every training phase in the package (probe fitting, co-training
retraining, the meta loop's warmup and its per-step supervised descent)
funnels through :class:`SupervisedStepper`: one Adam state, one plateau
schedule driven by an exponential moving average of the labeled-batch
loss, and one without-replacement batch sampler per model.
"""

from __future__ import annotations

import numpy as np

from .models import LinearProbe, SkipMLP, predict_hard
from .numerics import (AdamState, PlateauSchedule, adam_step, cross_entropy,
                       mse, plateau_update)


class BatchSampler:
    """Without-replacement batches over n rows, reshuffled per epoch."""

    def __init__(self, n, batch_size, rng):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def next(self):
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


class EmaTracker:
    """Exponential moving average seeded by the first observation."""

    def __init__(self, decay=0.9):
        self.decay = decay
        self.value = None

    def update(self, x):
        self.value = x if self.value is None else (
            self.decay * self.value + (1.0 - self.decay) * x)
        return self.value


def loss_and_grad(model, X, targets, weight=1.0):
    """Forward/backward round trip: (loss value, flat gradient).

    Classifiers (anything with a class count ``k``) are scored with mean
    cross-entropy, regressors with mean squared error.
    """
    out, trace = model.forward(X)
    loss = cross_entropy(targets, out) if hasattr(model, "k") else mse(targets, out)
    return loss, model.backward(trace, targets, weight)


class SupervisedStepper:
    """One model's supervised optimizer bundle.

    Wraps Adam, the plateau schedule, the loss EMA it monitors, and a
    seeded batch sampler. ``step()`` draws the next batch and descends;
    ``step_batch(X, y)`` descends on a given batch (used by the meta loop,
    which needs the batch before the update).
    """

    def __init__(self, model, X, y, batch_size, opt, sched, seed_seq,
                 optimizer="adam"):
        self.model = model
        self.X = np.asarray(X)
        self.y = y
        self.optimizer = optimizer
        self.sampler = BatchSampler(self.X.shape[0], batch_size,
                                    np.random.default_rng(seed_seq))
        self.adam = AdamState.for_size(model.num_params, lr=opt["lr"],
                                       beta1=opt["beta1"], beta2=opt["beta2"],
                                       epsilon=opt["epsilon"])
        self.schedule = PlateauSchedule(patience=sched["patience"],
                                        factor=sched["factor"],
                                        current_lr=opt["lr"])
        self.ema = EmaTracker(sched["ema_decay"])

    @property
    def lr(self):
        return self.schedule.current_lr

    def next_batch(self):
        idx = self.sampler.next()
        return self.X[idx], self.y[idx]

    def observe_loss(self, loss):
        plateau_update(self.schedule, self.ema.update(loss))

    def step_batch(self, Xb, yb):
        loss, grad = loss_and_grad(self.model, Xb, yb)
        if self.optimizer == "sgd":
            new = self.model.get_flat() - self.lr * grad
        else:
            new = adam_step(self.model.get_flat(), grad, self.adam, lr=self.lr)
        self.model.set_flat(new)
        self.observe_loss(loss)
        return loss

    def step(self):
        Xb, yb = self.next_batch()
        return self.step_batch(Xb, yb)


DEFAULT_OPT = {"lr": 1e-4, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8}
DEFAULT_SCHED = {"patience": 10, "factor": 0.5, "ema_decay": 0.9}


def make_model(kind, d, k, rng, hidden_width=1024, hidden_layers=3):
    if kind == "linear":
        return LinearProbe(d, k, rng)
    if kind == "mlp":
        return SkipMLP(d, k, rng, hidden_width=hidden_width,
                       hidden_layers=hidden_layers)
    raise ValueError(f"unknown model kind {kind!r}")


def train_supervised(model, X, y, steps, batch_size, opt=None, sched=None,
                     seed_seq=None, optimizer="adam"):
    """Fit a model on labeled data; returns the per-step loss list."""
    opt = dict(DEFAULT_OPT, **(opt or {}))
    sched = dict(DEFAULT_SCHED, **(sched or {}))
    stepper = SupervisedStepper(model, X, y, batch_size, opt, sched,
                                seed_seq if seed_seq is not None
                                else np.random.SeedSequence(0),
                                optimizer=optimizer)
    return [stepper.step() for _ in range(steps)]


def top1_accuracy(model, X, y):
    """Top-1 accuracy in percent."""
    pred = predict_hard(model.predict_proba(X))
    return 100.0 * float(np.mean(pred == y))
