"""Backdoor learning slope and influence-function machinery.

At the unpoisoned optimum w0 (the beta = 0 minimizer), the derivative of the
triggered-test loss with respect to the poison weight beta is

    raw = - g_ts^T H^{-1} c

where g_ts is the gradient of the triggered-test loss sum, H the Hessian of
the full beta = 0 objective, and c the gradient of the poison-set loss term
(the mixed beta/parameter derivative). The same H^{-1} powers classic
influence values -grad(test)^T H^{-1} grad(train); summing those over every
(triggered test, poison train) pair reproduces raw exactly by bilinearity,
which the tests pin down.

raw is mapped to the bounded slope score theta = -(2/pi) * arctan(raw), so
steeper descent into the backdoor means theta closer to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .datasets import LabeledDataset
from .errors import GeometryError, ParameterError
from .learners import (
    LearnerConfig,
    ModelState,
    _floor_intercept_curvature,
    dataset_loss,
    dataset_loss_grad,
    fit,
    objective,
    per_sample_loss_grads,
    rbf_kernel,
    spd_factor,
)


def slope_theta(raw: float) -> float:
    """Map a raw slope to [-1, 1]; -1 raw gives 0.5, steeper descent -> 1."""
    return -(2.0 / math.pi) * math.atan(raw)


@dataclass(frozen=True)
class SlopeResult:
    """Raw slope (sum-loss convention) plus its bounded rescaling."""

    raw: float
    theta: float
    method: str
    fd_step: float | None = None
    solve_residual: float | None = None


@dataclass(frozen=True)
class InfluenceRecord:
    """One (train sample, test sample) influence value."""

    train_index: int
    test_index: int
    value: float


class HessianFactor:
    """Shared Cholesky factorization of the beta = 0 objective Hessian.

    Build once via hessian_factor, reuse across slope and influence queries.
    solve() applies the (possibly jittered) factorization; residual_norm()
    always measures against the original Hessian so callers can see what the
    jitter cost them.
    """

    def __init__(self, hessian: np.ndarray, state: ModelState, config: LearnerConfig):
        self.hessian = hessian
        self.state = state
        self.config = config
        self._factor, self.jitter = spd_factor(hessian, context=f"{config.family} hessian")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self._factor, rhs)

    def residual_norm(self, solution: np.ndarray, rhs: np.ndarray) -> float:
        return float(np.linalg.norm(self.hessian @ solution - rhs))


def _check_stationary(
    config: LearnerConfig,
    state: ModelState,
    clean: LabeledDataset,
    poison: LabeledDataset | None,
) -> None:
    if state.beta != 0.0:
        raise ParameterError(f"state was fitted at beta={state.beta}, slope needs beta=0")
    ev = objective(config, clean, poison, 0.0, state)
    if ev.grad_norm > config.solver_tol:
        raise ParameterError(
            f"state is not stationary: gradient norm {ev.grad_norm:.3e} "
            f"exceeds solver_tol {config.solver_tol:.1e}"
        )


def hessian_factor(
    config: LearnerConfig,
    state: ModelState,
    clean: LabeledDataset,
    poison: LabeledDataset | None = None,
) -> HessianFactor:
    """Factor the beta = 0 objective Hessian at state."""
    ev = objective(config, clean, poison, 0.0, state, want_hessian=True)
    hess = ev.hessian.copy()
    _floor_intercept_curvature(hess)
    return HessianFactor(hess, state, config)


def slope_analytic(
    config: LearnerConfig,
    state: ModelState,
    clean: LabeledDataset,
    poison: LabeledDataset,
    triggered_test: LabeledDataset,
    factor: HessianFactor | None = None,
) -> SlopeResult:
    """Implicit-differentiation slope of the triggered-test loss at beta = 0.

    state must be the converged beta = 0 optimum (checked against
    config.solver_tol). poison and triggered_test must be nonempty.
    """
    if poison.n_samples == 0:
        raise ParameterError("poison set is empty; the slope of nothing is zero by definition")
    if triggered_test.n_samples == 0:
        raise ParameterError("triggered test set is empty")
    _check_stationary(config, state, clean, poison)
    if factor is None:
        factor = hessian_factor(config, state, clean, poison)
    cross = dataset_loss_grad(state, poison, reduction=config.reduction)
    g_ts = dataset_loss_grad(state, triggered_test, reduction="sum")
    x = factor.solve(cross)
    raw = -float(g_ts @ x)
    return SlopeResult(
        raw=raw,
        theta=slope_theta(raw),
        method="analytic",
        solve_residual=factor.residual_norm(x, cross),
    )


def slope_finite_difference(
    config: LearnerConfig,
    clean: LabeledDataset,
    poison: LabeledDataset,
    triggered_test: LabeledDataset,
    step: float,
    state: ModelState | None = None,
) -> SlopeResult:
    """Forward difference (L(P_ts, w*(h)) - L(P_ts, w*(0))) / h.

    Refits at beta = step, warm-started from the beta = 0 optimum. Pass a
    converged beta = 0 state to skip the first fit. An empty poison set
    short-circuits to slope 0: the objective does not depend on beta there.
    """
    if not 0.0 < step <= 1.0:
        raise ParameterError(f"step must be in (0, 1], got {step}")
    if triggered_test.n_samples == 0:
        raise ParameterError("triggered test set is empty")
    if state is None:
        state = fit(config, clean, poison, beta=0.0)
    else:
        _check_stationary(config, state, clean, poison)
    if poison.n_samples == 0:
        return SlopeResult(0.0, slope_theta(0.0), "finite_difference", fd_step=step)
    shifted = fit(config, clean, poison, beta=step, warm_start=state)
    base = dataset_loss(state, triggered_test, reduction="sum")
    moved = dataset_loss(shifted, triggered_test, reduction="sum")
    raw = (moved - base) / step
    return SlopeResult(raw, slope_theta(raw), "finite_difference", fd_step=step)


def influence_values(
    state: ModelState,
    train: LabeledDataset,
    test: LabeledDataset,
    factor: HessianFactor,
) -> np.ndarray:
    """Matrix of -grad(test_i)^T H^{-1} grad(train_j), shape (n_test, n_train)."""
    if train.n_samples == 0 or test.n_samples == 0:
        raise ParameterError("influence needs nonempty train and test sets")
    g_train = per_sample_loss_grads(state, train)
    g_test = per_sample_loss_grads(state, test)
    return -(g_test @ factor.solve(g_train.T))


def pairwise_influence(
    state: ModelState,
    train: LabeledDataset,
    train_index: int,
    test: LabeledDataset,
    test_index: int,
    factor: HessianFactor,
) -> InfluenceRecord:
    """Influence of one training sample on one test sample's loss."""
    if not 0 <= train_index < train.n_samples:
        raise ParameterError(f"train_index {train_index} out of range [0, {train.n_samples})")
    if not 0 <= test_index < test.n_samples:
        raise ParameterError(f"test_index {test_index} out of range [0, {test.n_samples})")
    g_j = per_sample_loss_grads(state, train.subset([train_index]))[0]
    g_t = per_sample_loss_grads(state, test.subset([test_index]))[0]
    value = -float(g_t @ factor.solve(g_j))
    return InfluenceRecord(train_index, test_index, value)


def top_influential(
    state: ModelState,
    train: LabeledDataset,
    test: LabeledDataset,
    test_index: int,
    k: int,
    factor: HessianFactor,
) -> list[InfluenceRecord]:
    """The k training samples with the largest influence on one test loss.

    Ranked by descending influence value; exact ties break toward the lower
    training index, so an all-zero gradient degenerates to index order.
    """
    if not 0 <= test_index < test.n_samples:
        raise ParameterError(f"test_index {test_index} out of range [0, {test.n_samples})")
    if not 0 <= k <= train.n_samples:
        raise ParameterError(f"k must be in [0, {train.n_samples}], got {k}")
    g_t = per_sample_loss_grads(state, test.subset([test_index]))[0]
    g_train = per_sample_loss_grads(state, train)
    values = -(g_train @ factor.solve(g_t))
    order = np.lexsort((np.arange(values.size), -values))
    return [
        InfluenceRecord(int(j), test_index, float(values[j])) for j in order[:k]
    ]


def input_gradient(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Gradient of the decision score with respect to the input point.

    Linear models return their weight vector; RBF models differentiate the
    kernel expansion. Useful for checking where in the image a model looks.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise GeometryError(f"expected a single flat sample, got shape {x.shape}")
    if state.kind == "primal":
        if x.size != state.weights.shape[0]:
            raise GeometryError(
                f"sample has {x.size} features, model has {state.weights.shape[0]}"
            )
        return state.weights.copy()
    if x.size != state.anchors.shape[1]:
        raise GeometryError(
            f"sample has {x.size} features, kernel anchors have {state.anchors.shape[1]}"
        )
    k_vec = rbf_kernel(x[None, :], state.anchors, state.gamma)[0]
    ak = state.weights * k_vec
    return 2.0 * state.gamma * (state.anchors.T @ ak - x * ak.sum())


def channel_max(values: np.ndarray, image_shape: tuple[int, int, int]) -> np.ndarray:
    """Reduce a flat per-pixel vector to an (h, w) map of max |value| over channels."""
    h, w, c = image_shape
    values = np.asarray(values, dtype=np.float64)
    if values.size != h * w * c:
        raise GeometryError(
            f"{values.size} values do not fill image shape {image_shape}"
        )
    return np.abs(values).reshape(h, w, c).max(axis=2)
