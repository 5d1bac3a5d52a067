"""Meta co-training: symmetric teacher/student updates between two views.

Per step, each model plays student against the other's sampled pseudo
labels on a shared unlabeled batch, then plays teacher: its pseudo-label
log-likelihood gradient is scaled by the scalar product h of the other
model's labeled-loss gradient (after its student step) with that model's
pseudo-loss gradient, so pseudo-labels that helped the partner on labeled
data are reinforced and harmful ones suppressed. A plain supervised step
on each model's own labeled batch runs alongside. Labeled and unlabeled
pools never change during a run.

Updates are routed through one Adam state per model by default; a raw
SGD mode exists so tests can compare a step against a straight-line
transcription of the update equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cotrain import joint_predict
from .errors import ConfigError
from .metrics import MetricsLog
from .models import sample_pseudo_labels
from .numerics import adam_step, cross_entropy, grad_dot
from .training import (DEFAULT_OPT, DEFAULT_SCHED, BatchSampler,
                       SupervisedStepper, loss_and_grad, make_model,
                       top1_accuracy)


@dataclass
class MctConfig:
    total_steps: int = 1000
    warmup_steps: int = 200
    batch_size: int = 4096
    model_kind: str = "mlp"
    hidden_width: int = 1024
    hidden_layers: int = 3
    opt: dict = field(default_factory=lambda: dict(DEFAULT_OPT))
    sched: dict = field(default_factory=lambda: dict(DEFAULT_SCHED))
    supervised_weight: float = 1.0
    labeled_grad_at: str = "updated"   # or "original" (pre-student params)
    optimizer: str = "adam"            # or "sgd"
    eval_every: int = 10
    init_seed: int = 13
    sample_seed: int = 13

    def validate(self):
        if self.total_steps <= 0:
            raise ConfigError("total_steps must be positive")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError("warmup_steps must lie in [0, total_steps]")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.labeled_grad_at not in ("updated", "original"):
            raise ConfigError(f"labeled_grad_at {self.labeled_grad_at!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer {self.optimizer!r}")
        if self.model_kind not in ("linear", "mlp"):
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        if self.eval_every <= 0:
            raise ConfigError("eval_every must be positive")


@dataclass
class StepRow:
    """Diagnostics from one meta step."""

    step: int
    h1: float
    h2: float
    student_loss1: float
    student_loss2: float
    labeled_loss1: float
    labeled_loss2: float
    sup_loss1: float
    sup_loss2: float
    aborted: bool = False
    post_student1: np.ndarray | None = None
    post_student2: np.ndarray | None = None


def model_init_rng(init_seed, v):
    """The seeded generator that initializes view model v."""
    return np.random.default_rng(np.random.SeedSequence((init_seed, v)))


def labeled_batch_seq(sample_seed, v):
    """Seed sequence for view model v's labeled batch sampler."""
    return np.random.SeedSequence((sample_seed, 10 + v))


def unlabeled_batch_seq(sample_seed):
    """Seed sequence for the shared unlabeled batch sampler."""
    return np.random.SeedSequence((sample_seed, 20))


def pseudo_label_seq(sample_seed, v):
    """Seed sequence for model v's pseudo-label sampling stream."""
    return np.random.SeedSequence((sample_seed, 30 + v))


def _apply(model, grad, eta, adam):
    if adam is None:
        model.set_flat(model.get_flat() - eta * grad)
    else:
        model.set_flat(adam_step(model.get_flat(), grad, adam, lr=eta))


def mct_step(model1, model2, labeled1, labeled2, unlabeled, eta1, eta2,
             rng1, rng2, *, adam1=None, adam2=None, supervised_weight=1.0,
             labeled_grad_at="updated", step=0, record_params=False):
    """One full meta step; mutates both models in place.

    Parameters
    ----------
    labeled1, labeled2 : (X, y) batches, one per view model.
    unlabeled : (U1, U2) complementary views of one shared batch.
    eta1, eta2 : learning rates (typically each model's schedule value).
    rng1, rng2 : per-model generators for pseudo-label sampling.
    adam1, adam2 : AdamState per model, or None for raw SGD.
    labeled_grad_at : evaluate the labeled-loss gradients entering h at
        the post-student parameters ("updated", default) or at the
        start-of-step parameters ("original").
    record_params : stash post-student-phase parameter snapshots on the
        returned row (test hook).

    Returns
    -------
    StepRow. If either h came out non-finite the step is rolled back and
    the row is flagged ``aborted``.
    """
    X1, Y1 = labeled1
    X2, Y2 = labeled2
    U1, U2 = unlabeled

    snap = (model1.get_flat(), model2.get_flat(),
            None if adam1 is None else adam1.copy(),
            None if adam2 is None else adam2.copy())

    # Soft predictions on the unlabeled batch at start-of-step parameters,
    # then one sampled hard pseudo-label per instance and model.
    yu1, tr_u1 = model1.forward(U1)
    yu2, tr_u2 = model2.forward(U2)
    pl1 = sample_pseudo_labels(yu1, rng1)
    pl2 = sample_pseudo_labels(yu2, rng2)

    # All start-of-step gradients before any parameter moves: each model's
    # student gradient (targets: the other's pseudo-labels) and its own
    # pseudo-label gradient (the teacher channel).
    g_s1 = model1.backward(tr_u1, pl2)
    g_s2 = model2.backward(tr_u2, pl1)
    g_p1 = model1.backward(tr_u1, pl1)
    g_p2 = model2.backward(tr_u2, pl2)
    student_loss1 = cross_entropy(pl2, yu1)
    student_loss2 = cross_entropy(pl1, yu2)

    # A non-finite student gradient can only produce a non-finite h;
    # abort before it poisons the parameters.
    if not all(np.all(np.isfinite(g)) for g in (g_s1, g_s2, g_p1, g_p2)):
        return StepRow(step, float("nan"), float("nan"),
                       student_loss1, student_loss2,
                       float("nan"), float("nan"), float("nan"), float("nan"),
                       aborted=True)

    if labeled_grad_at == "original":
        l1, gl1 = loss_and_grad(model1, X1, Y1)
        l2, gl2 = loss_and_grad(model2, X2, Y2)

    # Student updates.
    _apply(model1, g_s1, eta1, adam1)
    _apply(model2, g_s2, eta2, adam2)
    post1 = model1.get_flat() if record_params else None
    post2 = model2.get_flat() if record_params else None

    if labeled_grad_at == "updated":
        l1, gl1 = loss_and_grad(model1, X1, Y1)
        l2, gl2 = loss_and_grad(model2, X2, Y2)

    # The meta scalars: how much each model's pseudo-labels moved the
    # other model's labeled loss, to first order.
    h1 = grad_dot(gl2, g_s2)
    h2 = grad_dot(gl1, g_s1)

    if not (math.isfinite(h1) and math.isfinite(h2)):
        model1.set_flat(snap[0])
        model2.set_flat(snap[1])
        if adam1 is not None:
            adam1.m, adam1.v, adam1.t = snap[2].m, snap[2].v, snap[2].t
        if adam2 is not None:
            adam2.m, adam2.v, adam2.t = snap[3].m, snap[3].v, snap[3].t
        return StepRow(step, h1, h2, student_loss1, student_loss2,
                       float("nan"), float("nan"), float("nan"), float("nan"),
                       aborted=True)

    # Teacher updates, scaled by the meta scalar.
    _apply(model1, h1 * g_p1, eta1, adam1)
    _apply(model2, h2 * g_p2, eta2, adam2)

    # Joint supervised step on each model's own labeled batch.
    sup1, gsup1 = loss_and_grad(model1, X1, Y1, weight=supervised_weight)
    _apply(model1, gsup1, eta1, adam1)
    sup2, gsup2 = loss_and_grad(model2, X2, Y2, weight=supervised_weight)
    _apply(model2, gsup2, eta2, adam2)

    return StepRow(step, h1, h2, student_loss1, student_loss2, l1, l2,
                   sup1, sup2, post_student1=post1, post_student2=post2)


def _joint_top1(model1, model2, test):
    R, ndeg = joint_predict(model1, model2,
                            test.view1.embeddings, test.view2.embeddings)
    return 100.0 * float(np.mean(R.argmax(axis=1) == test.labels)), ndeg


def run_mct(labeled, unlabeled, test, config):
    """Meta co-training over fixed pools.

    Steps 1..warmup train each model supervised-only; afterwards every
    step is one :func:`mct_step` plus schedule bookkeeping. Evaluation
    (per-model and joint top-1) runs every ``eval_every`` steps, at the
    end of warmup, and at the final step.

    Returns (MetricsLog, (model1, model2), [StepRow], summary).
    """
    config.validate()
    if labeled.labels is None or test.labels is None:
        raise ConfigError("meta co-training needs labeled train and test views")
    k = labeled.view1.class_count
    y = labeled.labels

    models = {}
    steppers = {}
    for v, view in ((1, labeled.view1), (2, labeled.view2)):
        models[v] = make_model(config.model_kind, view.d, k,
                               model_init_rng(config.init_seed, v),
                               hidden_width=config.hidden_width,
                               hidden_layers=config.hidden_layers)
        steppers[v] = SupervisedStepper(
            models[v], view.embeddings, y, config.batch_size,
            dict(DEFAULT_OPT, **config.opt), dict(DEFAULT_SCHED, **config.sched),
            labeled_batch_seq(config.sample_seed, v), optimizer=config.optimizer)

    u_sampler = BatchSampler(unlabeled.n, config.batch_size,
                             np.random.default_rng(
                                 unlabeled_batch_seq(config.sample_seed)))
    pl_rng = {v: np.random.default_rng(pseudo_label_seq(config.sample_seed, v))
              for v in (1, 2)}

    log = MetricsLog()
    trace = []
    warmup_joint = None
    best_joint = -1.0
    final_joint = None

    def evaluate(t):
        nonlocal best_joint, final_joint
        for v in (1, 2):
            acc = top1_accuracy(models[v], test.view1.embeddings if v == 1
                                else test.view2.embeddings, test.labels)
            log.append(t, 0, "mct", str(v), "test", "top1", acc)
        joint, ndeg = _joint_top1(models[1], models[2], test)
        log.append(t, 0, "mct", "joint", "test", "top1", joint)
        if ndeg:
            log.append(t, 0, "mct", "joint", "test", "degenerate_rows", ndeg)
        best_joint = max(best_joint, joint)
        final_joint = joint
        return joint

    use_adam = config.optimizer == "adam"
    if config.warmup_steps == 0:
        warmup_joint = evaluate(0)
    for t in range(1, config.total_steps + 1):
        if t <= config.warmup_steps:
            for v in (1, 2):
                Xb, yb = steppers[v].next_batch()
                steppers[v].step_batch(Xb, yb)
        else:
            b1 = steppers[1].next_batch()
            b2 = steppers[2].next_batch()
            iu = u_sampler.next()
            ub = (unlabeled.view1.embeddings[iu], unlabeled.view2.embeddings[iu])
            row = mct_step(
                models[1], models[2], b1, b2, ub,
                steppers[1].lr, steppers[2].lr, pl_rng[1], pl_rng[2],
                adam1=steppers[1].adam if use_adam else None,
                adam2=steppers[2].adam if use_adam else None,
                supervised_weight=config.supervised_weight,
                labeled_grad_at=config.labeled_grad_at, step=t)
            trace.append(row)
            if row.aborted:
                log.append(t, 0, "mct", "all", "train", "aborted_step", 1.0)
            else:
                log.append(t, 0, "mct", "1", "train", "h", row.h1)
                log.append(t, 0, "mct", "2", "train", "h", row.h2)
                steppers[1].observe_loss(row.sup_loss1)
                steppers[2].observe_loss(row.sup_loss2)
        if t == config.warmup_steps:
            warmup_joint = evaluate(t)
        elif t % config.eval_every == 0 or t == config.total_steps:
            evaluate(t)

    summary = {
        "final_joint_top1": final_joint,
        "best_joint_top1": best_joint,
        "warmup_joint_top1": warmup_joint,
        "steps": config.total_steps,
        "aborted_steps": sum(1 for r in trace if r.aborted),
    }
    return log, (models[1], models[2]), trace, summary
