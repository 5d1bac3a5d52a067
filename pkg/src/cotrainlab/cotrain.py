"""Classic two-view co-training.

Each iteration retrains both view models from scratch on their current
labeled pools, lets each model pseudo-label its most confident unlabeled
instances up to a per-model quota (a fraction of the original unlabeled
pool size), returns conflicting picks to the unlabeled pool, and moves
the rest into the complementary view's labeled pool. Evaluation uses the
renormalized element-wise product of the two models' predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UnlabeledPoolExhausted
from .metrics import MetricsLog
from .numerics import hadamard_rows
from .training import (DEFAULT_OPT, DEFAULT_SCHED, make_model,
                       top1_accuracy, train_supervised)


@dataclass
class CotrainConfig:
    steps_per_iteration: int = 200
    k_fraction: float = 0.1
    max_iterations: int = 10
    batch_size: int = 4096
    model_kind: str = "mlp"
    hidden_width: int = 1024
    hidden_layers: int = 3
    opt: dict = field(default_factory=lambda: dict(DEFAULT_OPT))
    sched: dict = field(default_factory=lambda: dict(DEFAULT_SCHED))
    init_seed: int = 13
    sample_seed: int = 13

    def validate(self):
        if self.steps_per_iteration <= 0:
            raise ConfigError("steps_per_iteration must be positive")
        if not 0.0 <= self.k_fraction <= 1.0:
            raise ConfigError(f"k_fraction {self.k_fraction} outside [0, 1]")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.model_kind not in ("linear", "mlp"):
            raise ConfigError(f"unknown model kind {self.model_kind!r}")


@dataclass
class PseudoLabelBatch:
    """One model's confident picks from the unlabeled pool.

    ``indices`` are pool row ids, ``labels`` the hard predictions that
    will pseudo-label the complementary view, ``confidences`` the max
    softmax probabilities that ranked them.
    """

    indices: np.ndarray
    labels: np.ndarray
    source_model: int
    confidences: np.ndarray

    def as_dict(self):
        return dict(zip(self.indices.tolist(), self.labels.tolist()))


class CoTrainState:
    """Labeled/unlabeled pool bookkeeping for one co-training run.

    The initial labeled instances sit in both pools. Pseudo-labeled
    additions are tracked per view as (unlabeled-pool index, label)
    pairs; ``unlabeled`` holds the indices still available. An index
    leaves the available pool at most once.
    """

    def __init__(self, labeled, unlabeled_pool, class_count):
        self.labeled = labeled            # PairedViews with labels
        self.pool = unlabeled_pool        # PairedViews, labels optional
        self.class_count = class_count
        self.u0 = unlabeled_pool.n
        self.unlabeled = np.arange(self.u0)
        self.extra_idx = {1: [], 2: []}   # pseudo-labeled rows per view
        self.extra_lab = {1: [], 2: []}
        self.models = {1: None, 2: None}
        self.iteration = 0

    def view(self, v):
        return self.labeled.view1 if v == 1 else self.labeled.view2

    def pool_view(self, v):
        return self.pool.view1 if v == 1 else self.pool.view2

    def labeled_arrays(self, v):
        """Training arrays for view v: initial labels plus pseudo-labels."""
        base = self.view(v)
        X = base.embeddings
        y = base.labels
        if self.extra_idx[v]:
            idx = np.asarray(self.extra_idx[v], dtype=np.int64)
            X = np.concatenate([X, self.pool_view(v).embeddings[idx]])
            y = np.concatenate([y, np.asarray(self.extra_lab[v], dtype=np.int64)])
        return X, y

    def labeled_index_sets(self):
        return set(self.extra_idx[1]), set(self.extra_idx[2])

    def check_invariants(self):
        """Pool conservation: no duplicates, no index both pseudo-labeled
        and still available, full accounting of the u0 indices, and no
        instance in both pools under different labels."""
        l1, l2 = self.labeled_index_sets()
        avail = set(self.unlabeled.tolist())
        assert len(l1) == len(self.extra_idx[1]), "duplicate in pool 1"
        assert len(l2) == len(self.extra_idx[2]), "duplicate in pool 2"
        assert not (l1 & avail) and not (l2 & avail), \
            "pseudo-labeled index still available"
        assert (l1 | l2 | avail) == set(range(self.u0)), "pool accounting broken"
        lab1 = dict(zip(self.extra_idx[1], self.extra_lab[1]))
        lab2 = dict(zip(self.extra_idx[2], self.extra_lab[2]))
        for idx in l1 & l2:
            assert lab1[idx] == lab2[idx], "conflicting labels in both pools"


def _retrain(state, config, v):
    X, y = state.labeled_arrays(v)
    rng = np.random.default_rng(
        np.random.SeedSequence((config.init_seed, v, state.iteration)))
    model = make_model(config.model_kind, X.shape[1], state.class_count, rng,
                       hidden_width=config.hidden_width,
                       hidden_layers=config.hidden_layers)
    train_supervised(
        model, X, y, config.steps_per_iteration, config.batch_size,
        opt=config.opt, sched=config.sched,
        seed_seq=np.random.SeedSequence((config.sample_seed, v, state.iteration)))
    state.models[v] = model
    return model


def _select_confident(model, model_id, pool_ids, X, quota):
    """The quota most confident predictions on X as a PseudoLabelBatch.

    Ranking uses a stable sort on confidence so ties resolve by pool
    position, keeping selection deterministic.
    """
    probs = model.predict_proba(X)
    conf = probs.max(axis=1)
    labels = probs.argmax(axis=1)
    order = np.argsort(-conf, kind="stable")[:quota]
    return PseudoLabelBatch(pool_ids[order], labels[order], model_id,
                            conf[order])


def cotrain_iteration(state, config):
    """One retrain-select-transfer round. Returns a metrics dict.

    Raises UnlabeledPoolExhausted when no unlabeled instances remain.
    """
    if state.unlabeled.size == 0:
        raise UnlabeledPoolExhausted("unlabeled pool is empty")
    state.iteration += 1
    info = {"iteration": state.iteration}

    for v in (1, 2):
        _retrain(state, config, v)

    quota = int(np.floor(config.k_fraction * state.u0))
    quota = min(quota, state.unlabeled.size)
    picks = {}
    for v in (1, 2):
        X = state.pool_view(v).embeddings[state.unlabeled]
        batch = _select_confident(state.models[v], v, state.unlabeled, X, quota)
        picks[v] = batch.as_dict()
        info[f"selected_{v}"] = len(picks[v])

    both = set(picks[1]) & set(picks[2])
    conflicts = {i for i in both if picks[1][i] != picks[2][i]}
    info["conflicts"] = len(conflicts)

    consumed = (set(picks[1]) | set(picks[2])) - conflicts
    for idx in sorted(set(picks[1]) - conflicts):
        state.extra_idx[2].append(idx)          # view-1 model labels view 2
        state.extra_lab[2].append(picks[1][idx])
    for idx in sorted(set(picks[2]) - conflicts):
        state.extra_idx[1].append(idx)
        state.extra_lab[1].append(picks[2][idx])
    if consumed:
        keep = ~np.isin(state.unlabeled, np.fromiter(consumed, dtype=np.int64))
        state.unlabeled = state.unlabeled[keep]

    info["transferred_to_1"] = len(set(picks[2]) - conflicts)
    info["transferred_to_2"] = len(set(picks[1]) - conflicts)
    info["pool_remaining"] = int(state.unlabeled.size)
    state.check_invariants()
    return info


def joint_predict(model1, model2, X1, X2):
    """Eq-4-style joint prediction: renormalized product of both outputs.

    Returns (probabilities, degenerate_row_count).
    """
    P = model1.predict_proba(X1)
    Q = model2.predict_proba(X2)
    R, degenerate = hadamard_rows(P, Q)
    return R, int(degenerate.sum())


def _evaluate(state, test, log, step, method="cotrain"):
    accs = {}
    for v, view in ((1, test.view1), (2, test.view2)):
        accs[v] = top1_accuracy(state.models[v], view.embeddings, view.labels)
        log.append(step, state.iteration, method, str(v), "test", "top1", accs[v])
    R, ndeg = joint_predict(state.models[1], state.models[2],
                            test.view1.embeddings, test.view2.embeddings)
    joint = 100.0 * float(np.mean(R.argmax(axis=1) == test.labels))
    log.append(step, state.iteration, method, "joint", "test", "top1", joint)
    if ndeg:
        log.append(step, state.iteration, method, "joint", "test",
                   "degenerate_rows", ndeg)
    accs["joint"] = joint
    return accs


def run_cotraining(labeled, unlabeled, test, config):
    """Full co-training run.

    Iteration 0 is the supervised baseline (both models trained on the
    initial labeled pools only); each later iteration retrains, selects
    and transfers. Stops at ``max_iterations`` or pool exhaustion.

    Returns (MetricsLog, CoTrainState, summary dict).
    """
    config.validate()
    if labeled.labels is None:
        raise ConfigError("co-training needs labeled training views")
    if test.labels is None:
        raise ConfigError("co-training needs a labeled test set")
    k = labeled.view1.class_count
    state = CoTrainState(labeled, unlabeled, k)
    log = MetricsLog()

    for v in (1, 2):
        _retrain(state, config, v)
    step = 2 * config.steps_per_iteration
    accs = _evaluate(state, test, log, step)
    log.append(step, 0, "cotrain", "all", "train", "pool_unlabeled",
               state.unlabeled.size)
    best_joint = accs["joint"]

    for _ in range(config.max_iterations):
        try:
            info = cotrain_iteration(state, config)
        except UnlabeledPoolExhausted:
            break
        step += 2 * config.steps_per_iteration
        accs = _evaluate(state, test, log, step)
        best_joint = max(best_joint, accs["joint"])
        for key in ("selected_1", "selected_2", "conflicts",
                    "transferred_to_1", "transferred_to_2", "pool_remaining"):
            log.append(step, state.iteration, "cotrain", "all", "train",
                       key, info[key])
        if state.pool.labels is not None:
            log.append(step, state.iteration, "cotrain", "all", "train",
                       "pseudo_label_accuracy", _pseudo_accuracy(state))

    summary = {"final_joint_top1": accs["joint"], "best_joint_top1": best_joint,
               "iterations": state.iteration,
               "final_top1_model1": accs[1], "final_top1_model2": accs[2]}
    return log, state, summary


def _pseudo_accuracy(state):
    """Fraction of pseudo-labels matching ground truth, when available."""
    correct = total = 0
    for v in (1, 2):
        if not state.extra_idx[v]:
            continue
        idx = np.asarray(state.extra_idx[v], dtype=np.int64)
        truth = state.pool.labels[idx]
        assigned = np.asarray(state.extra_lab[v], dtype=np.int64)
        correct += int(np.sum(truth == assigned))
        total += idx.size
    return 100.0 * correct / total if total else 100.0
