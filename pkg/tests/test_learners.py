"""Learner objective, solver, and prediction checks.

The derivative tests here are oracle-first: analytic gradients and Hessians
are compared against central finite differences of the objective value, and
the ridge solver is compared against an independently assembled normal-
equations solve. Nothing in these oracles reuses the package's own
differentiation code.
"""

import numpy as np
import pytest

from backdoor_lens.datasets import LabeledDataset, make_blobs
from backdoor_lens.errors import ConvergenceError, ParameterError, ValidationError
from backdoor_lens.learners import (
    FAMILIES,
    LearnerConfig,
    ModelState,
    accuracy,
    dataset_loss,
    dataset_loss_grad,
    decision_scores,
    fit,
    objective,
    per_sample_loss_grads,
    predict,
    rbf_kernel,
)


def random_problem(family, seed=0, n=30, m=8, d=5, lam=0.5, gamma=0.8):
    rng = np.random.default_rng(seed)
    feats_c = rng.uniform(0.0, 1.0, size=(n, d))
    labels_c = np.tile([0, 1], n)[:n]
    feats_p = rng.uniform(0.0, 1.0, size=(m, d))
    labels_p = np.tile([1, 0], m)[:m]
    clean = LabeledDataset(feats_c, labels_c, (0.0, 1.0), name="rand-clean")
    poison = LabeledDataset(feats_p, labels_p, (0.0, 1.0), name="rand-poison")
    config = LearnerConfig(
        family,
        lam=lam,
        gamma=gamma if family == "svm_rbf" else None,
    )
    return config, clean, poison


def state_at(config, clean, poison, params, intercept, beta=0.0):
    if config.family == "svm_rbf":
        kind = "dual"
        parts = [clean.features]
        if poison is not None and poison.n_samples:
            parts.append(poison.features)
        anchors = np.vstack(parts)
    else:
        kind = "primal"
        anchors = None
    return ModelState(
        family=config.family,
        kind=kind,
        weights=params,
        intercept=float(intercept),
        beta=beta,
        lam=config.lam,
        gamma=config.gamma,
        anchors=anchors,
    )


def param_point(config, clean, poison, seed=11, scale=0.3):
    """A deterministic off-minimum parameter point, kink-safe for hinges."""
    n_params = (
        clean.n_samples + poison.n_samples
        if config.family == "svm_rbf"
        else clean.n_features
    )
    rng = np.random.default_rng(seed)
    params = scale * rng.standard_normal(n_params)
    intercept = scale * rng.standard_normal()
    if config.family in ("svm_squared_hinge", "svm_rbf"):
        state = state_at(config, clean, poison, params, intercept)
        for ds in (clean, poison):
            y = 2.0 * ds.labels - 1.0
            gap = 1.0 - y * decision_scores(state, ds.features)
            assert np.min(np.abs(gap)) > 1e-3, "test point too close to hinge kink"
    return params, intercept


def pack(params, intercept):
    return np.concatenate([params, [intercept]])


def eval_at(config, clean, poison, beta, vec, want_hessian=False):
    state = state_at(config, clean, poison, vec[:-1], vec[-1], beta=beta)
    return objective(config, clean, poison, beta, state, want_hessian=want_hessian)


def fd_gradient(value_fn, x0, h=1e-6):
    g = np.empty_like(x0)
    for i in range(x0.size):
        step = h * (1.0 + abs(x0[i]))
        e = np.zeros_like(x0)
        e[i] = step
        g[i] = (value_fn(x0 + e) - value_fn(x0 - e)) / (2.0 * step)
    return g


def fd_hessian(grad_fn, x0, h=1e-5):
    n = x0.size
    hess = np.empty((n, n))
    for i in range(n):
        step = h * (1.0 + abs(x0[i]))
        e = np.zeros_like(x0)
        e[i] = step
        hess[:, i] = (grad_fn(x0 + e) - grad_fn(x0 - e)) / (2.0 * step)
    return 0.5 * (hess + hess.T)


class TestConfigValidation:
    def test_unknown_family(self):
        with pytest.raises(ParameterError):
            LearnerConfig("perceptron", lam=1.0)

    def test_lambda_positive(self):
        with pytest.raises(ParameterError):
            LearnerConfig("logistic", lam=0.0)
        with pytest.raises(ParameterError):
            LearnerConfig("logistic", lam=-1.0)

    def test_rbf_needs_gamma(self):
        with pytest.raises(ParameterError):
            LearnerConfig("svm_rbf", lam=1.0)
        with pytest.raises(ParameterError):
            LearnerConfig("svm_rbf", lam=1.0, gamma=0.0)

    def test_solver_knobs(self):
        with pytest.raises(ParameterError):
            LearnerConfig("logistic", lam=1.0, solver_tol=0.0)
        with pytest.raises(ParameterError):
            LearnerConfig("logistic", lam=1.0, max_iter=0)
        with pytest.raises(ParameterError):
            LearnerConfig("logistic", lam=1.0, reduction="median")


class TestRbfKernel:
    def test_self_similarity_is_one(self):
        x = np.random.default_rng(0).uniform(0, 1, (7, 4))
        k = rbf_kernel(x, x, gamma=2.0)
        assert np.allclose(np.diag(k), 1.0)

    def test_symmetry(self):
        x = np.random.default_rng(1).uniform(0, 1, (7, 4))
        k = rbf_kernel(x, x, gamma=0.5)
        assert np.allclose(k, k.T)

    def test_known_value(self):
        a = np.array([[0.0, 0.0]])
        b = np.array([[1.0, 1.0]])
        k = rbf_kernel(a, b, gamma=0.25)
        assert np.isclose(k[0, 0], np.exp(-0.25 * 2.0))

    def test_no_negative_squared_distances(self):
        # near-duplicate rows can push the expansion slightly negative
        x = np.tile([[0.3, 0.7]], (5, 1)) + 1e-9
        k = rbf_kernel(x, x, gamma=1e6)
        assert np.all(k <= 1.0 + 1e-12)
        assert np.all(k > 0.0)


class TestObjectiveValuesAtZero:
    """Hand-checked values at the all-zeros parameter point."""

    def zero_eval(self, family, gamma=None):
        config, clean, poison = random_problem(family, gamma=gamma or 0.8)
        n_params = (
            clean.n_samples + poison.n_samples if family == "svm_rbf" else clean.n_features
        )
        vec = np.zeros(n_params + 1)
        return clean, eval_at(config, clean, None, 0.0, vec)

    def test_logistic(self):
        clean, ev = self.zero_eval("logistic")
        assert np.isclose(ev.value, clean.n_samples * np.log(2.0), rtol=1e-14)

    def test_ridge(self):
        clean, ev = self.zero_eval("ridge")
        assert np.isclose(ev.value, float(clean.n_samples), rtol=1e-14)

    def test_squared_hinge(self):
        clean, ev = self.zero_eval("svm_squared_hinge")
        assert np.isclose(ev.value, float(clean.n_samples), rtol=1e-14)


@pytest.mark.parametrize("family", FAMILIES)
class TestDerivativeOracles:
    """Analytic derivatives vs central finite differences of the value."""

    def test_gradient_matches_fd(self, family):
        config, clean, poison = random_problem(family)
        params, intercept = param_point(config, clean, poison)
        x0 = pack(params, intercept)
        beta = 0.7
        analytic = eval_at(config, clean, poison, beta, x0).gradient
        numeric = fd_gradient(lambda v: eval_at(config, clean, poison, beta, v).value, x0)
        rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
        assert rel < 1e-6

    def test_hessian_matches_fd(self, family):
        config, clean, poison = random_problem(family)
        params, intercept = param_point(config, clean, poison)
        x0 = pack(params, intercept)
        beta = 0.7
        analytic = eval_at(config, clean, poison, beta, x0, want_hessian=True).hessian
        numeric = fd_hessian(
            lambda v: eval_at(config, clean, poison, beta, v).gradient, x0
        )
        rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
        assert rel < 1e-6

    def test_poison_coupling_is_linear_in_beta(self, family):
        # the objective is affine in beta, so a gradient difference across
        # any beta gap recovers the poison loss gradient with no FD error
        config, clean, poison = random_problem(family)
        params, intercept = param_point(config, clean, poison)
        x0 = pack(params, intercept)
        g0 = eval_at(config, clean, poison, 0.0, x0).gradient
        g1 = eval_at(config, clean, poison, 1.0, x0).gradient
        state = state_at(config, clean, poison, params, intercept)
        cross = dataset_loss_grad(state, poison, reduction="sum")
        assert np.allclose(g1 - g0, cross, rtol=1e-10, atol=1e-12)

    def test_per_sample_grads_sum_to_dataset_grad(self, family):
        config, clean, poison = random_problem(family)
        params, intercept = param_point(config, clean, poison)
        state = state_at(config, clean, poison, params, intercept)
        rows = per_sample_loss_grads(state, clean)
        assert rows.shape == (clean.n_samples, state.weights.size + 1)
        total = dataset_loss_grad(state, clean, reduction="sum")
        assert np.allclose(rows.sum(axis=0), total, rtol=1e-12)

    def test_dataset_loss_grad_matches_fd(self, family):
        config, clean, poison = random_problem(family)
        params, intercept = param_point(config, clean, poison)
        x0 = pack(params, intercept)

        def loss_at(vec):
            st = state_at(config, clean, poison, vec[:-1], vec[-1])
            return dataset_loss(st, clean, reduction="sum")

        state = state_at(config, clean, poison, params, intercept)
        analytic = dataset_loss_grad(state, clean, reduction="sum")
        numeric = fd_gradient(loss_at, x0)
        rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
        assert rel < 1e-6


class TestRidgeClosedForm:
    """Newton result vs an independent normal-equations solve."""

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("beta", [0.0, 0.6])
    def test_matches_normal_equations(self, seed, beta):
        rng = np.random.default_rng(seed)
        n, m, d = 25 + seed, 6, 4
        lam = float(10.0 ** rng.uniform(-2, 1))
        feats_c = rng.uniform(0, 1, (n, d))
        labels_c = rng.permutation(np.tile([0, 1], n)[:n])
        feats_p = rng.uniform(0, 1, (m, d))
        labels_p = rng.permutation(np.tile([0, 1], m)[:m])
        clean = LabeledDataset(feats_c, labels_c, (0.0, 1.0), name="cf-clean")
        poison = LabeledDataset(feats_p, labels_p, (0.0, 1.0), name="cf-poison")
        config = LearnerConfig("ridge", lam=lam, solver_tol=1e-12)

        state = fit(config, clean, poison, beta=beta)

        a_c = np.hstack([feats_c, np.ones((n, 1))])
        a_p = np.hstack([feats_p, np.ones((m, 1))])
        y_c = 2.0 * labels_c - 1.0
        y_p = 2.0 * labels_p - 1.0
        penalty = np.eye(d + 1)
        penalty[d, d] = 0.0
        lhs = a_c.T @ a_c + beta * (a_p.T @ a_p) + lam * penalty
        rhs = a_c.T @ y_c + beta * (a_p.T @ y_p)
        theta = np.linalg.solve(lhs, rhs)

        got = pack(state.weights, state.intercept)
        assert np.linalg.norm(got - theta) / np.linalg.norm(theta) < 1e-8


class TestFit:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_converges_on_blobs(self, family):
        split = make_blobs(
            n_per_class=30, centers=((0.25, 0.5), (0.75, 0.5)), stddev=0.07, seed=4
        )
        gamma = 5.0 if family == "svm_rbf" else None
        config = LearnerConfig(family, lam=1.0, gamma=gamma)
        state = fit(config, split, None)
        assert state.grad_norm <= config.solver_tol
        assert state.n_iter >= 1
        assert accuracy(state, split) > 0.9

    def test_warm_start_skips_iterations(self):
        config, clean, poison = random_problem("logistic")
        first = fit(config, clean, poison, beta=0.3)
        again = fit(config, clean, poison, beta=0.3, warm_start=first)
        assert again.n_iter == 0
        assert np.array_equal(again.weights, first.weights)
        assert again.intercept == first.intercept

    def test_warm_start_family_mismatch(self):
        config, clean, poison = random_problem("logistic")
        first = fit(config, clean, poison)
        other = LearnerConfig("ridge", lam=config.lam)
        with pytest.raises(ParameterError):
            fit(other, clean, poison, warm_start=first)

    def test_convergence_error_carries_grad_norm(self):
        config, clean, poison = random_problem("logistic")
        strict = LearnerConfig("logistic", lam=config.lam, solver_tol=1e-14, max_iter=1)
        with pytest.raises(ConvergenceError) as err:
            fit(strict, clean, poison, beta=0.5)
        assert err.value.grad_norm > 0.0

    def test_negative_beta_rejected(self):
        config, clean, poison = random_problem("logistic")
        with pytest.raises(ParameterError):
            fit(config, clean, poison, beta=-0.1)

    def test_empty_clean_rejected(self):
        config, clean, poison = random_problem("logistic")
        empty = LabeledDataset(
            np.zeros((0, clean.n_features)), np.zeros(0, dtype=int), (0.0, 1.0)
        )
        with pytest.raises(ParameterError):
            fit(config, empty, poison)

    def test_labels_outside_binary_rejected(self):
        feats = np.random.default_rng(0).uniform(0, 1, (10, 3))
        labels = np.array([0, 1, 2] * 3 + [0])
        ds = LabeledDataset(feats, labels, (0.0, 1.0), name="threeway")
        config = LearnerConfig("logistic", lam=1.0)
        with pytest.raises(ValidationError):
            fit(config, ds, None)

    def test_mean_reduction_objective_identity(self):
        config, clean, poison = random_problem("logistic")
        mean_cfg = LearnerConfig("logistic", lam=config.lam, reduction="mean")
        state = fit(mean_cfg, clean, None)
        ev = objective(mean_cfg, clean, None, 0.0, state)
        expect = dataset_loss(state, clean, reduction="mean") + config.lam * float(
            state.weights @ state.weights
        )
        assert np.isclose(ev.value, expect, rtol=1e-12)

    def test_zero_beta_ignores_poison(self):
        config, clean, poison = random_problem("ridge")
        with_poison = fit(config, clean, poison, beta=0.0)
        without = fit(config, clean, None, beta=0.0)
        assert np.allclose(with_poison.weights, without.weights, rtol=1e-12)
        assert np.isclose(with_poison.intercept, without.intercept, rtol=1e-12)


class TestPrediction:
    def test_score_tie_predicts_one(self):
        config, clean, _ = random_problem("logistic")
        state = state_at(config, clean, None, np.zeros(clean.n_features), 0.0)
        assert np.all(predict(state, clean.features) == 1)

    def test_decision_scores_dim_mismatch(self):
        config, clean, _ = random_problem("logistic")
        state = state_at(config, clean, None, np.zeros(clean.n_features), 0.0)
        with pytest.raises(ParameterError):
            decision_scores(state, np.zeros((4, clean.n_features + 1)))

    def test_dataset_loss_empty_rejected(self):
        config, clean, _ = random_problem("logistic")
        state = state_at(config, clean, None, np.zeros(clean.n_features), 0.0)
        empty = LabeledDataset(
            np.zeros((0, clean.n_features)), np.zeros(0, dtype=int), (0.0, 1.0)
        )
        with pytest.raises(ParameterError):
            dataset_loss(state, empty)

    def test_accuracy_on_separable_data(self):
        split = make_blobs(
            n_per_class=40, centers=((0.2, 0.2), (0.8, 0.8)), stddev=0.05, seed=9
        )
        config = LearnerConfig("logistic", lam=0.1)
        state = fit(config, split, None)
        assert accuracy(state, split) == 1.0


class TestModelState:
    def test_weights_read_only(self):
        config, clean, poison = random_problem("logistic")
        state = fit(config, clean, poison)
        with pytest.raises(ValueError):
            state.weights[0] = 99.0

    def test_primal_round_trip(self):
        config, clean, poison = random_problem("logistic")
        state = fit(config, clean, poison, beta=0.4)
        clone = ModelState.from_config(state.to_config())
        assert clone.family == state.family
        assert clone.kind == state.kind
        assert np.array_equal(clone.weights, state.weights)
        assert clone.intercept == state.intercept
        assert clone.beta == state.beta
        assert clone.lam == state.lam
        assert clone.anchors is None

    def test_dual_round_trip_keeps_anchors(self):
        config, clean, poison = random_problem("svm_rbf")
        state = fit(config, clean, poison, beta=0.2)
        block = state.to_config()
        assert block["lambda"] == state.lam
        clone = ModelState.from_config(block)
        assert np.array_equal(clone.anchors, state.anchors)
        assert np.array_equal(clone.weights, state.weights)
        x = clean.features[:5]
        assert np.allclose(decision_scores(clone, x), decision_scores(state, x))

    def test_anchor_count_mismatch(self):
        with pytest.raises(ParameterError):
            ModelState(
                family="svm_rbf",
                kind="dual",
                weights=np.zeros(3),
                intercept=0.0,
                beta=0.0,
                lam=1.0,
                gamma=1.0,
                anchors=np.zeros((4, 2)),
            )
