"""Meta co-training step and loop.

The core check transcribes the update equations line by line (sample
pseudo-labels, student descent, labeled gradients at the updated
parameters, the meta scalar h, teacher descent, supervised descent) in
plain array arithmetic against model primitives, and requires the raw-SGD
step to reproduce it to 1e-10.
"""

import copy

import numpy as np
import pytest

from cotrainlab.data import SyntheticSpec, generate_synthetic
from cotrainlab.errors import ConfigError
from cotrainlab.mct import (MctConfig, labeled_batch_seq, mct_step,
                            model_init_rng, run_mct)
from cotrainlab.models import LinearProbe, SkipMLP
from cotrainlab.numerics import cross_entropy
from cotrainlab.training import (DEFAULT_SCHED, loss_and_grad, make_model,
                                 train_supervised)


def sample_cat(P, rng):
    """Independent inverse-CDF categorical sampler (one uniform per row)."""
    u = rng.random(P.shape[0])
    out = np.empty(P.shape[0], dtype=np.int64)
    for i in range(P.shape[0]):
        c = np.cumsum(P[i])
        out[i] = min(np.searchsorted(c, u[i] * c[-1], side="left"), P.shape[1] - 1)
    return out


def grad_at(model, params, X, targets):
    """Loss gradient with the model temporarily at the given parameters."""
    saved = model.get_flat()
    model.set_flat(params)
    _, g = loss_and_grad(model, X, targets)
    model.set_flat(saved)
    return g


def oracle_step(model1, model2, b1, b2, ub, eta, seed1, seed2,
                supervised_weight=1.0):
    """Straight-line transcription of one meta step under raw SGD.

    Works on deep copies; returns (theta1_final, theta2_final, h1, h2).
    """
    m1, m2 = copy.deepcopy(model1), copy.deepcopy(model2)
    X1, Y1 = b1
    X2, Y2 = b2
    U1, U2 = ub
    theta1, theta2 = m1.get_flat(), m2.get_flat()

    yhat1 = m1.predict_proba(U1)
    yhat2 = m2.predict_proba(U2)
    pl1 = sample_cat(yhat1, np.random.default_rng(seed1))
    pl2 = sample_cat(yhat2, np.random.default_rng(seed2))

    g1 = grad_at(m1, theta1, U1, pl2)       # student gradients at theta
    g2 = grad_at(m2, theta2, U2, pl1)
    gp1 = grad_at(m1, theta1, U1, pl1)      # own-pseudo-label gradients
    gp2 = grad_at(m2, theta2, U2, pl2)

    theta1p = theta1 - eta * g1
    theta2p = theta2 - eta * g2

    gl1 = grad_at(m1, theta1p, X1, Y1)      # labeled grads at theta'
    gl2 = grad_at(m2, theta2p, X2, Y2)
    h1 = float(gl2 @ g2)
    h2 = float(gl1 @ g1)

    theta1pp = theta1p - eta * h1 * gp1
    theta2pp = theta2p - eta * h2 * gp2

    gsup1 = grad_at(m1, theta1pp, X1, Y1) * supervised_weight
    gsup2 = grad_at(m2, theta2pp, X2, Y2) * supervised_weight
    return theta1pp - eta * gsup1, theta2pp - eta * gsup2, h1, h2


def oracle_step_adam(model1, model2, b1, b2, ub, eta, seed1, seed2,
                     adam1, adam2, supervised_weight=1.0):
    """Straight-line transcription with every update routed through Adam.

    Mirrors :func:`oracle_step` but advances copies of the two Adam
    states through the same student/teacher/supervised sequence.
    """
    from cotrainlab.numerics import adam_step

    m1, m2 = copy.deepcopy(model1), copy.deepcopy(model2)
    a1, a2 = adam1.copy(), adam2.copy()
    X1, Y1 = b1
    X2, Y2 = b2
    U1, U2 = ub
    theta1, theta2 = m1.get_flat(), m2.get_flat()

    yhat1 = m1.predict_proba(U1)
    yhat2 = m2.predict_proba(U2)
    pl1 = sample_cat(yhat1, np.random.default_rng(seed1))
    pl2 = sample_cat(yhat2, np.random.default_rng(seed2))

    g1 = grad_at(m1, theta1, U1, pl2)
    g2 = grad_at(m2, theta2, U2, pl1)
    gp1 = grad_at(m1, theta1, U1, pl1)
    gp2 = grad_at(m2, theta2, U2, pl2)

    theta1p = adam_step(theta1, g1, a1, lr=eta)
    theta2p = adam_step(theta2, g2, a2, lr=eta)

    gl1 = grad_at(m1, theta1p, X1, Y1)
    gl2 = grad_at(m2, theta2p, X2, Y2)
    h1 = float(gl2 @ g2)
    h2 = float(gl1 @ g1)

    theta1pp = adam_step(theta1p, h1 * gp1, a1, lr=eta)
    theta2pp = adam_step(theta2p, h2 * gp2, a2, lr=eta)

    gsup1 = grad_at(m1, theta1pp, X1, Y1) * supervised_weight
    gsup2 = grad_at(m2, theta2pp, X2, Y2) * supervised_weight
    return (adam_step(theta1pp, gsup1, a1, lr=eta),
            adam_step(theta2pp, gsup2, a2, lr=eta), h1, h2)


def tiny_instance(seed, kind="mlp", d=3, k=2, n_lab=5, n_unlab=4):
    rng = np.random.default_rng(seed)
    if kind == "mlp":
        m1 = SkipMLP(d, k, rng, hidden_width=4, hidden_layers=3)
        m2 = SkipMLP(d, k, rng, hidden_width=4, hidden_layers=3)
    else:
        m1 = LinearProbe(d, k, rng)
        m2 = LinearProbe(d, k, rng)
    b1 = (rng.normal(size=(n_lab, d)), rng.integers(0, k, size=n_lab))
    b2 = (rng.normal(size=(n_lab, d)), rng.integers(0, k, size=n_lab))
    ub = (rng.normal(size=(n_unlab, d)), rng.normal(size=(n_unlab, d)))
    return m1, m2, b1, b2, ub


class TestStepOracle:
    @pytest.mark.parametrize("case", range(8))
    def test_matches_straight_line_transcription(self, case):
        kind = "mlp" if case % 2 == 0 else "linear"
        m1, m2, b1, b2, ub = tiny_instance(1000 + case, kind)
        eta = 0.05
        want1, want2, want_h1, want_h2 = oracle_step(
            m1, m2, b1, b2, ub, eta, seed1=7 + case, seed2=77 + case)
        row = mct_step(m1, m2, b1, b2, ub, eta, eta,
                       np.random.default_rng(7 + case),
                       np.random.default_rng(77 + case))
        assert abs(row.h1 - want_h1) < 1e-10 * max(1.0, abs(want_h1))
        assert abs(row.h2 - want_h2) < 1e-10 * max(1.0, abs(want_h2))
        np.testing.assert_allclose(m1.get_flat(), want1, rtol=0, atol=1e-10)
        np.testing.assert_allclose(m2.get_flat(), want2, rtol=0, atol=1e-10)

    def test_symmetric_inputs_give_symmetric_updates(self):
        rng = np.random.default_rng(3)
        d, k = 4, 3
        m1 = SkipMLP(d, k, np.random.default_rng(42), hidden_width=4,
                     hidden_layers=2)
        m2 = SkipMLP(d, k, np.random.default_rng(42), hidden_width=4,
                     hidden_layers=2)
        X = rng.normal(size=(6, d))
        y = rng.integers(0, k, size=6)
        U = rng.normal(size=(5, d))
        for step in range(3):
            row = mct_step(m1, m2, (X, y), (X, y), (U, U), 0.05, 0.05,
                           np.random.default_rng(step),
                           np.random.default_rng(step))
            np.testing.assert_array_equal(m1.get_flat(), m2.get_flat())
            assert row.h1 == row.h2

    def test_student_phase_equals_supervised_step_on_pseudo_batch(self):
        m1, m2, b1, b2, ub = tiny_instance(5, "linear")
        eta = 0.02
        # Recover the pseudo-labels the step will draw, then the expected
        # plain supervised update on that fixed pseudo-batch.
        yhat2 = m2.predict_proba(ub[1])
        pl2 = sample_cat(yhat2, np.random.default_rng(11))
        ref = copy.deepcopy(m1)
        _, g = loss_and_grad(ref, ub[0], pl2)
        expected = ref.get_flat() - eta * g
        row = mct_step(m1, m2, b1, b2, ub, eta, eta,
                       np.random.default_rng(10), np.random.default_rng(11),
                       record_params=True)
        np.testing.assert_allclose(row.post_student1, expected, atol=1e-12)

    def test_teacher_update_negates_with_h_sign(self):
        # The update vector is eta * h * g; IEEE sign symmetry makes its
        # negation exact, which is what the rolled-out arithmetic applies.
        rng = np.random.default_rng(6)
        g = rng.normal(size=50)
        for h in (0.37, -2.25, 1e-7):
            plus = -(0.05 * (h * g))
            minus = -(0.05 * ((-h) * g))
            np.testing.assert_array_equal(minus, -plus)

    def test_zero_h_means_teacher_noop(self):
        # With orthogonal gradients h = 0 and the teacher phase adds
        # nothing: final params equal student phase + supervised step.
        m1, m2, b1, b2, ub = tiny_instance(8, "linear")
        eta = 0.01
        want1, want2, h1, h2 = oracle_step(m1, m2, b1, b2, ub, eta, 1, 2)
        # rebuild with h forced to zero in the transcription
        m1c, m2c = copy.deepcopy(m1), copy.deepcopy(m2)
        theta1, theta2 = m1c.get_flat(), m2c.get_flat()
        yhat1 = m1c.predict_proba(ub[0])
        yhat2 = m2c.predict_proba(ub[1])
        pl1 = sample_cat(yhat1, np.random.default_rng(1))
        pl2 = sample_cat(yhat2, np.random.default_rng(2))
        g1 = grad_at(m1c, theta1, ub[0], pl2)
        theta1p = theta1 - eta * g1
        gsup = grad_at(m1c, theta1p, *b1)
        no_teacher = theta1p - eta * gsup
        if abs(h1) > 0:  # generic case: teacher phase moves parameters
            row = mct_step(m1, m2, b1, b2, ub, eta, eta,
                           np.random.default_rng(1), np.random.default_rng(2))
            assert not np.allclose(m1.get_flat(), no_teacher, atol=1e-14)

    @pytest.mark.parametrize("case", range(4))
    def test_adam_mode_matches_adam_transcription(self, case):
        from cotrainlab.numerics import AdamState
        kind = "mlp" if case % 2 == 0 else "linear"
        m1, m2, b1, b2, ub = tiny_instance(7000 + case, kind)
        eta = 0.01
        adam1 = AdamState.for_size(m1.num_params, lr=eta)
        adam2 = AdamState.for_size(m2.num_params, lr=eta)
        want1, want2, h1, h2 = oracle_step_adam(
            m1, m2, b1, b2, ub, eta, case, 50 + case, adam1, adam2)
        row = mct_step(m1, m2, b1, b2, ub, eta, eta,
                       np.random.default_rng(case),
                       np.random.default_rng(50 + case),
                       adam1=adam1, adam2=adam2)
        assert abs(row.h1 - h1) < 1e-10 * max(1.0, abs(h1))
        np.testing.assert_allclose(m1.get_flat(), want1, rtol=0, atol=1e-10)
        np.testing.assert_allclose(m2.get_flat(), want2, rtol=0, atol=1e-10)

    def test_adam_mode_student_phase_routes_through_adam(self):
        # with Adam states supplied, the student update must equal a
        # manual adam_step on the same gradient
        from cotrainlab.numerics import AdamState, adam_step
        m1, m2, b1, b2, ub = tiny_instance(12, "linear")
        eta = 0.01
        yhat2 = m2.predict_proba(ub[1])
        pl2 = sample_cat(yhat2, np.random.default_rng(3))
        ref = copy.deepcopy(m1)
        _, g = loss_and_grad(ref, ub[0], pl2)
        ref_adam = AdamState.for_size(ref.num_params, lr=eta)
        expected = adam_step(ref.get_flat(), g, ref_adam, lr=eta)
        adam1 = AdamState.for_size(m1.num_params, lr=eta)
        adam2 = AdamState.for_size(m2.num_params, lr=eta)
        row = mct_step(m1, m2, b1, b2, ub, eta, eta,
                       np.random.default_rng(2), np.random.default_rng(3),
                       adam1=adam1, adam2=adam2, record_params=True)
        np.testing.assert_array_equal(row.post_student1, expected)
        # three updates per model per step: student, teacher, supervised
        assert adam1.t == 3 and adam2.t == 3

    def test_full_width_architecture_smoke(self):
        # the real 3x1024 dense-skip stack trains and evaluates cleanly
        labeled, unlabeled, test = small_mct_data(n_labeled=24, n_unlabeled=32,
                                                  n_test=16)
        cfg = small_config(total_steps=3, warmup_steps=1, batch_size=16,
                           model_kind="mlp", eval_every=1)
        cfg.hidden_width = 1024
        cfg.hidden_layers = 3
        log, (m1, m2), trace, summary = run_mct(labeled, unlabeled, test, cfg)
        assert m1.input_widths() == [6, 1030, 2054, 3078]
        assert len(trace) == 2
        assert np.isfinite(summary["final_joint_top1"])

    def test_sgd_mode_runs_end_to_end(self):
        labeled, unlabeled, test = small_mct_data()
        cfg = small_config(optimizer="sgd")
        log, _, trace, summary = run_mct(labeled, unlabeled, test, cfg)
        assert summary["aborted_steps"] == 0
        assert all(np.isfinite(r.h1) for r in trace)

    def test_nonfinite_h_aborts_and_restores(self):
        class BrokenModel(LinearProbe):
            def backward(self, trace, targets, weight=1.0):
                g = super().backward(trace, targets, weight)
                return g * np.nan

        rng = np.random.default_rng(9)
        m1 = LinearProbe(3, 2, rng)
        m2 = BrokenModel(3, 2, rng)
        b = (rng.normal(size=(4, 3)), rng.integers(0, 2, size=4))
        ub = (rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
        before1, before2 = m1.get_flat(), m2.get_flat()
        row = mct_step(m1, m2, b, b, ub, 0.1, 0.1,
                       np.random.default_rng(0), np.random.default_rng(1))
        assert row.aborted
        np.testing.assert_array_equal(m1.get_flat(), before1)
        np.testing.assert_array_equal(m2.get_flat(), before2)


class TestFirstOrderConsistency:
    def test_teacher_update_matches_enumerated_objective_derivative(self):
        # The teacher objective for model 1 is the expected labeled loss of
        # model 2 after its student step on model-1-sampled labels. Its
        # gradient in theta_1 should match eta*B*E[h1*g_p1] to first order;
        # enumerate all label assignments to take the expectation exactly.
        rng = np.random.default_rng(21)
        d, k, B, eta = 3, 2, 4, 1e-3
        m1 = LinearProbe(d, k, rng)
        m2 = LinearProbe(d, k, rng)
        U = rng.normal(size=(B, d))
        X2 = rng.normal(size=(5, d))
        Y2 = rng.integers(0, k, size=5)
        theta1 = m1.get_flat()
        theta2 = m2.get_flat()

        def enum_assignments():
            grid = np.indices((k,) * B).reshape(B, -1).T
            return grid  # every possible label vector over the batch

        def log_prob(theta, c):
            m1.set_flat(theta)
            p = m1.predict_proba(U)
            m1.set_flat(theta1)
            return float(np.sum(np.log(p[np.arange(B), c])))

        def phi(theta):
            # expected post-student labeled loss of model 2
            total = 0.0
            for c in enum_assignments():
                w = np.exp(log_prob(theta, c))
                g2 = grad_at(m2, theta2, U, c)
                m2.set_flat(theta2 - eta * g2)
                loss = cross_entropy(Y2, m2.predict_proba(X2))
                m2.set_flat(theta2)
                total += w * loss
            return total

        # exact expectation of the composite update h1(c) * g_p1(c)
        expect = np.zeros_like(theta1)
        for c in enum_assignments():
            w = np.exp(log_prob(theta1, c))
            g2 = grad_at(m2, theta2, U, c)
            gl2 = grad_at(m2, theta2 - eta * g2, X2, Y2)
            h1 = float(gl2 @ g2)
            gp1 = grad_at(m1, theta1, U, c)
            expect += w * h1 * gp1
        predicted = eta * B * expect

        fd_rng = np.random.default_rng(22)
        eps = 1e-6
        for _ in range(4):
            u = fd_rng.normal(size=theta1.size)
            u /= np.linalg.norm(u)
            dphi = (phi(theta1 + eps * u) - phi(theta1 - eps * u)) / (2 * eps)
            pred = float(predicted @ u)
            denom = max(abs(dphi), abs(pred), 1e-9)
            assert abs(dphi - pred) / denom < 1e-2


def small_mct_data(seed=13, n_labeled=40, n_unlabeled=120, n_test=120):
    spec = SyntheticSpec(classes=4, d1=6, d2=6, separation=4.0, noise=0.8,
                         n_labeled=n_labeled, n_unlabeled=n_unlabeled,
                         n_test=n_test, seed=seed)
    out = generate_synthetic(spec)
    return out.labeled, out.unlabeled, out.test


def small_config(**kw):
    base = dict(total_steps=40, warmup_steps=10, batch_size=32,
                model_kind="linear", eval_every=10,
                opt={"lr": 0.05, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8})
    base.update(kw)
    return MctConfig(**base)


class TestRunMct:
    def test_warmup_equals_total_reduces_to_supervised(self):
        labeled, unlabeled, test = small_mct_data()
        cfg = small_config(total_steps=25, warmup_steps=25)
        log, (m1, m2), trace, summary = run_mct(labeled, unlabeled, test, cfg)
        assert trace == []
        for v, view in ((1, labeled.view1), (2, labeled.view2)):
            ref = make_model("linear", view.d, 4, model_init_rng(cfg.init_seed, v))
            train_supervised(ref, view.embeddings, labeled.labels, 25, 32,
                             opt=cfg.opt, sched=dict(DEFAULT_SCHED),
                             seed_seq=labeled_batch_seq(cfg.sample_seed, v))
            got = (m1 if v == 1 else m2).get_flat()
            np.testing.assert_array_equal(got, ref.get_flat())

    def test_pools_immutable(self):
        labeled, unlabeled, test = small_mct_data()
        snap_lab = labeled.view1.embeddings.copy()
        snap_unlab = unlabeled.view2.embeddings.copy()
        snap_y = labeled.labels.copy()
        run_mct(labeled, unlabeled, test, small_config())
        np.testing.assert_array_equal(labeled.view1.embeddings, snap_lab)
        np.testing.assert_array_equal(unlabeled.view2.embeddings, snap_unlab)
        np.testing.assert_array_equal(labeled.labels, snap_y)

    def test_h_recorded_every_post_warmup_step(self):
        labeled, unlabeled, test = small_mct_data()
        cfg = small_config(total_steps=30, warmup_steps=12)
        log, _, trace, _ = run_mct(labeled, unlabeled, test, cfg)
        assert len(trace) == 18
        steps = [r.step for r in trace]
        assert steps == list(range(13, 31))
        assert all(np.isfinite(r.h1) and np.isfinite(r.h2) for r in trace)
        h_rows = log.values("h", model_id="1")
        assert len(h_rows) == 18

    def test_determinism(self):
        labeled, unlabeled, test = small_mct_data()
        log1, _, _, s1 = run_mct(labeled, unlabeled, test, small_config())
        log2, _, _, s2 = run_mct(labeled, unlabeled, test, small_config())
        assert log1.rows == log2.rows
        assert s1 == s2

    def test_summary_reports_warmup_and_best(self):
        labeled, unlabeled, test = small_mct_data()
        log, _, _, summary = run_mct(labeled, unlabeled, test, small_config())
        assert summary["warmup_joint_top1"] is not None
        assert summary["best_joint_top1"] >= summary["final_joint_top1"]

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            small_config(warmup_steps=50, total_steps=40).validate()
        with pytest.raises(ConfigError):
            small_config(labeled_grad_at="sideways").validate()
        with pytest.raises(ConfigError):
            run_mct(None, None, None, small_config(total_steps=0))
