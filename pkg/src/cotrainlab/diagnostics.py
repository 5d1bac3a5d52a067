"""View-quality battery.

Sufficiency: can a simple probe trained on a labeled fraction of one view
clear an accuracy bar? Independence: train a dense-skip regressor to
predict one view from the other under MSE, then ask how well a linear
classifier does on the translated embeddings; near-chance accuracy is
evidence that one view cannot be predicted from the other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import stratified_split
from .errors import ConfigError, DimensionError
from .models import LinearProbe, SkipMLPRegressor
from .numerics import mse
from .training import (DEFAULT_OPT, DEFAULT_SCHED, SupervisedStepper,
                       make_model, top1_accuracy, train_supervised)


@dataclass
class ProbeConfig:
    train_steps: int = 1000
    batch_size: int = 4096
    hidden_width: int = 1024
    hidden_layers: int = 3
    opt: dict = field(default_factory=lambda: dict(DEFAULT_OPT))
    sched: dict = field(default_factory=lambda: dict(DEFAULT_SCHED))
    # The regressor needs an optimizer that settles onto the
    # conditional-mean map; Adam dithers around it at lr scale.
    translator_optimizer: str = "sgd"
    translator_lr: float = 0.1
    # Held-out fraction for early-stopping the regressor at best val MSE,
    # so an unrelated target yields a near-constant map, not fitted noise.
    translator_val_fraction: float = 0.1
    translator_val_every: int = 10
    init_seed: int = 13
    sample_seed: int = 13


@dataclass
class SufficiencyReport:
    view_name: str
    probe_kind: str
    label_fraction: float
    top1: float
    threshold: float
    passed: bool


@dataclass
class TranslationReport:
    source_view: str
    target_view: str
    train_mse: float
    top1: float


def sufficiency_probe(train_view, test_view, split, probe_kind="linear",
                      threshold=75.0, config=None):
    """Train a probe on a stratified labeled fraction, report test top-1.

    ``probe_kind`` is "linear" or "mlp"; the pass flag compares the
    accuracy against ``threshold`` (percent).
    """
    if probe_kind not in ("linear", "mlp"):
        raise ConfigError(f"unknown probe kind {probe_kind!r}")
    if train_view.labels is None or test_view.labels is None:
        raise DimensionError("sufficiency probe needs labeled views")
    cfg = config or ProbeConfig()
    labeled, _ = stratified_split(train_view, split)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.init_seed, 1)))
    model = make_model(probe_kind, train_view.d, train_view.class_count, rng,
                       hidden_width=cfg.hidden_width,
                       hidden_layers=cfg.hidden_layers)
    train_supervised(model, labeled.embeddings, labeled.labels,
                     cfg.train_steps, cfg.batch_size, opt=cfg.opt,
                     sched=cfg.sched,
                     seed_seq=np.random.SeedSequence((cfg.sample_seed, 1)))
    acc = top1_accuracy(model, test_view.embeddings, test_view.labels)
    return SufficiencyReport(train_view.view_name, probe_kind, split.fraction,
                             acc, threshold, acc >= threshold)


def _fit_translator(translator, Xs, Xt, cfg):
    """Train the regressor with held-out early stopping.

    A seeded slice of the training rows is held out; the parameters with
    the best held-out MSE are restored at the end. When the target is
    unrelated to the source this stops the fit at its most input-constant
    point instead of letting it keep finite-sample structure.
    """
    t_opt = dict(cfg.opt, lr=cfg.translator_lr) \
        if cfg.translator_optimizer == "sgd" else cfg.opt
    n = Xs.shape[0]
    n_val = int(round(cfg.translator_val_fraction * n))
    if n_val == 0 or n - n_val == 0:
        train_supervised(translator, Xs, Xt, cfg.train_steps, cfg.batch_size,
                         opt=t_opt, sched=cfg.sched,
                         seed_seq=np.random.SeedSequence((cfg.sample_seed, 2)),
                         optimizer=cfg.translator_optimizer)
        return
    split_rng = np.random.default_rng(np.random.SeedSequence((cfg.sample_seed, 4)))
    perm = split_rng.permutation(n)
    val_idx, fit_idx = perm[:n_val], perm[n_val:]
    Xf, Tf = Xs[fit_idx], Xt[fit_idx]
    Xv, Tv = Xs[val_idx], Xt[val_idx]

    stepper = SupervisedStepper(
        translator, Xf, Tf, cfg.batch_size,
        dict(DEFAULT_OPT, **t_opt), dict(DEFAULT_SCHED, **cfg.sched),
        np.random.SeedSequence((cfg.sample_seed, 2)),
        optimizer=cfg.translator_optimizer)
    best = (mse(Tv, translator.forward(Xv)[0]), translator.get_flat())
    for t in range(1, cfg.train_steps + 1):
        stepper.step()
        if t % cfg.translator_val_every == 0 or t == cfg.train_steps:
            val = mse(Tv, translator.forward(Xv)[0])
            if val < best[0]:
                best = (val, translator.get_flat())
    translator.set_flat(best[1])


def independence_probe(source, target, config=None, source_test=None,
                       test_labels=None):
    """Cross-view translation test.

    Fits a dense-skip regressor mapping source embeddings to target
    embeddings by MSE on the full training set, then trains a linear
    classifier on the regressor outputs. Reports the translator's final
    training MSE and the classifier's top-1 accuracy (on translated test
    embeddings when given, else on the training outputs). Accuracy near
    chance means the target view is hard to predict from the source.
    """
    if source.n != target.n:
        raise DimensionError(
            f"source/target hold {source.n} vs {target.n} instances")
    if source.labels is None:
        raise DimensionError("independence probe needs labels on the source view")
    cfg = config or ProbeConfig()

    rng = np.random.default_rng(np.random.SeedSequence((cfg.init_seed, 2)))
    translator = SkipMLPRegressor(source.d, target.d, rng,
                                  hidden_width=cfg.hidden_width,
                                  hidden_layers=cfg.hidden_layers)
    Xs = source.embeddings
    Xt = np.asarray(target.embeddings, dtype=np.float64)
    _fit_translator(translator, Xs, Xt, cfg)
    translated = translator.forward(Xs)[0]
    train_mse = mse(Xt, translated)

    probe_rng = np.random.default_rng(np.random.SeedSequence((cfg.init_seed, 3)))
    probe = LinearProbe(target.d, source.class_count, probe_rng)
    train_supervised(probe, translated, source.labels, cfg.train_steps,
                     cfg.batch_size, opt=cfg.opt, sched=cfg.sched,
                     seed_seq=np.random.SeedSequence((cfg.sample_seed, 3)))

    if source_test is not None:
        eval_embeddings = translator.forward(source_test.embeddings)[0]
        eval_labels = test_labels if test_labels is not None else source_test.labels
    else:
        eval_embeddings, eval_labels = translated, source.labels
    acc = top1_accuracy(probe, eval_embeddings, eval_labels)
    return TranslationReport(source.view_name, target.view_name,
                             train_mse, acc)


def format_sufficiency_table(reports):
    lines = [f"{'view':24s} {'probe':8s} {'frac':>6s} {'top1':>7s} "
             f"{'bar':>6s} pass"]
    for r in reports:
        lines.append(f"{r.view_name:24s} {r.probe_kind:8s} "
                     f"{100 * r.label_fraction:5.1f}% {r.top1:6.2f}% "
                     f"{r.threshold:5.1f}% {'yes' if r.passed else 'no'}")
    return "\n".join(lines)


def format_translation_table(reports):
    lines = [f"{'source -> target':40s} {'train MSE':>12s} {'probe top1':>11s}"]
    for r in reports:
        arrow = f"{r.source_view} -> {r.target_view}"
        lines.append(f"{arrow:40s} {r.train_mse:12.6f} {r.top1:10.2f}%")
    return "\n".join(lines)
