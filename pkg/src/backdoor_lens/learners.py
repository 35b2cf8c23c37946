"""Convex learners with exact gradients and Hessians.

Four families share one objective: sum of per-sample losses on the clean
training set, plus beta times the sum on the poison set, plus lam times a
quadratic regularizer that never touches the intercept (unless the
regularize_intercept knob is set). Parameters are primal weights for
logistic / ridge / squared hinge and kernel-expansion coefficients for the
RBF squared hinge, where the expansion anchors are the training inputs.

Labels enter as {0, 1} and are mapped to {-1, +1} internally. All losses are
twice differentiable (squared hinge almost everywhere), which is what the
implicit-differentiation slope machinery needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit

from .datasets import LabeledDataset
from .errors import (
    ConditioningError,
    ConvergenceError,
    ParameterError,
    ValidationError,
)

FAMILIES = ("logistic", "ridge", "svm_squared_hinge", "svm_rbf")

# Floor added to the intercept's Hessian diagonal when the data curvature
# underflows (e.g. squared hinge with every margin >= 1); the intercept is
# not regularized so nothing else keeps that entry positive.
_INTERCEPT_CURVATURE_FLOOR = 1e-10

_ARMIJO_C = 1e-4
_ARMIJO_SHRINK = 0.5
_ARMIJO_MIN_STEP = 1e-14


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters for one learner instance.

    reduction picks whether the objective's data terms are plain sums
    (canonical) or per-set means; regularize_intercept includes the intercept
    in the quadratic penalty. Both default to the conventions the slope
    machinery assumes.
    """

    family: str
    lam: float
    gamma: float | None = None
    solver_tol: float = 1e-8
    max_iter: int = 100
    reduction: Literal["sum", "mean"] = "sum"
    regularize_intercept: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if not self.lam > 0:
            raise ParameterError(f"lam must be positive, got {self.lam}")
        if self.family == "svm_rbf":
            if self.gamma is None or not self.gamma > 0:
                raise ParameterError(f"svm_rbf needs gamma > 0, got {self.gamma}")
        if not self.solver_tol > 0:
            raise ParameterError(f"solver_tol must be positive, got {self.solver_tol}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.reduction not in ("sum", "mean"):
            raise ParameterError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")


@dataclass(frozen=True)
class ModelState:
    """A fitted (or candidate) parameter point.

    weights holds primal weights or dual coefficients depending on kind;
    anchors carries the kernel expansion inputs for dual states and is None
    for primal ones.
    """

    family: str
    kind: Literal["primal", "dual"]
    weights: np.ndarray
    intercept: float
    beta: float
    lam: float
    gamma: float | None = None
    anchors: np.ndarray | None = None
    n_iter: int = 0
    grad_norm: float = float("nan")

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.anchors is not None:
            a = np.asarray(self.anchors, dtype=np.float64)
            if a.flags.writeable:
                # read-only anchor arrays are shared as-is between states
                a = a.copy()
                a.setflags(write=False)
            object.__setattr__(self, "anchors", a)
            if a.shape[0] != w.shape[0]:
                raise ParameterError(
                    f"{w.shape[0]} dual coefficients but {a.shape[0]} anchors"
                )

    def to_config(self) -> dict:
        block = {
            "family": self.family,
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "beta": self.beta,
            "lambda": self.lam,
            "gamma": self.gamma,
        }
        if self.anchors is not None:
            block["anchors"] = self.anchors.tolist()
        return block

    @classmethod
    def from_config(cls, block: dict) -> "ModelState":
        anchors = block.get("anchors")
        return cls(
            family=block["family"],
            kind=block["kind"],
            weights=np.asarray(block["weights"], dtype=np.float64),
            intercept=float(block["intercept"]),
            beta=float(block["beta"]),
            lam=float(block["lambda"]),
            gamma=block.get("gamma"),
            anchors=None if anchors is None else np.asarray(anchors, dtype=np.float64),
        )


@dataclass(frozen=True)
class ObjectiveEval:
    """Objective value and gradient at one parameter point."""

    value: float
    gradient: np.ndarray
    grad_norm: float
    hessian: np.ndarray | None = None


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * squared euclidean distance), dense."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def _signed_labels(ds: LabeledDataset) -> np.ndarray:
    labels = ds.labels
    if labels.size and not set(np.unique(labels)) <= {0, 1}:
        raise ValidationError(
            f"{ds.name}: learners need labels in {{0, 1}}, got {sorted(set(labels.tolist()))}"
        )
    return 2.0 * labels - 1.0


def _loss_terms(family: str, scores: np.ndarray, y: np.ndarray):
    """Per-sample loss, d(loss)/d(score) and d2(loss)/d(score)^2."""
    if family == "logistic":
        m = y * scores
        loss = np.logaddexp(0.0, -m)
        s = expit(-m)
        return loss, -y * s, s * (1.0 - s)
    if family == "ridge":
        r = scores - y
        return r * r, 2.0 * r, np.full_like(r, 2.0)
    # squared hinge, shared by the primal and RBF families
    gap = np.maximum(0.0, 1.0 - y * scores)
    return gap * gap, -2.0 * y * gap, 2.0 * (gap > 0.0)


def _design(config: LearnerConfig, anchors: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    if config.family == "svm_rbf":
        return rbf_kernel(x, anchors, config.gamma)
    return np.asarray(x, dtype=np.float64)


def _regularizer(config: LearnerConfig, params: np.ndarray, gram: np.ndarray | None):
    """(value, gradient, hessian) of the quadratic penalty, without lam."""
    if config.family == "svm_rbf":
        kp = gram @ params
        return float(params @ kp), 2.0 * kp, 2.0 * gram
    return float(params @ params), 2.0 * params, 2.0 * np.eye(params.shape[0])


class _Problem:
    """Preassembled design matrices for one (clean, poison, beta) objective."""

    def __init__(
        self,
        config: LearnerConfig,
        clean: LabeledDataset,
        poison: LabeledDataset | None,
        beta: float,
        anchors: np.ndarray | None,
    ):
        if clean.n_samples == 0:
            raise ParameterError("clean training set is empty")
        self.config = config
        self.beta = float(beta)
        if config.family == "svm_rbf":
            if anchors is None:
                parts = [clean.features]
                if poison is not None and poison.n_samples:
                    parts.append(poison.features)
                anchors = np.vstack(parts)
            self.gram = rbf_kernel(anchors, anchors, config.gamma)
        else:
            anchors = None
            self.gram = None
        self.anchors = anchors
        self.phi_clean = _design(config, anchors, clean.features)
        self.y_clean = _signed_labels(clean)
        if poison is not None and poison.n_samples:
            if poison.n_features != clean.n_features:
                raise ParameterError(
                    f"poison has {poison.n_features} features, clean has {clean.n_features}"
                )
            self.phi_poison = _design(config, anchors, poison.features)
            self.y_poison = _signed_labels(poison)
        else:
            self.phi_poison = None
            self.y_poison = None
        self.n_params = self.phi_clean.shape[1]
        self.scale_clean = 1.0 / clean.n_samples if config.reduction == "mean" else 1.0
        self.scale_poison = (
            1.0 / poison.n_samples
            if (config.reduction == "mean" and poison is not None and poison.n_samples)
            else 1.0
        )

    def _term(self, phi, y, params, intercept, want_hessian):
        scores = phi @ params + intercept
        loss, d1, d2 = _loss_terms(self.config.family, scores, y)
        value = float(loss.sum())
        grad = np.empty(self.n_params + 1)
        grad[:-1] = phi.T @ d1
        grad[-1] = d1.sum()
        hess = None
        if want_hessian:
            hess = np.empty((self.n_params + 1, self.n_params + 1))
            hess[:-1, :-1] = (phi * d2[:, None]).T @ phi
            cross = phi.T @ d2
            hess[:-1, -1] = cross
            hess[-1, :-1] = cross
            hess[-1, -1] = d2.sum()
        return value, grad, hess

    def evaluate(self, params: np.ndarray, intercept: float, want_hessian: bool = False) -> ObjectiveEval:
        cfg = self.config
        value, grad, hess = self._term(self.phi_clean, self.y_clean, params, intercept, want_hessian)
        value *= self.scale_clean
        grad *= self.scale_clean
        if hess is not None:
            hess *= self.scale_clean
        if self.phi_poison is not None and self.beta != 0.0:
            pv, pg, ph = self._term(self.phi_poison, self.y_poison, params, intercept, want_hessian)
            w = self.beta * self.scale_poison
            value += w * pv
            grad += w * pg
            if hess is not None:
                hess += w * ph
        rv, rg, rh = _regularizer(cfg, params, self.gram)
        value += cfg.lam * rv
        grad[:-1] += cfg.lam * rg
        if cfg.regularize_intercept:
            value += cfg.lam * intercept * intercept
            grad[-1] += cfg.lam * 2.0 * intercept
        if hess is not None:
            hess[:-1, :-1] += cfg.lam * rh
            if cfg.regularize_intercept:
                hess[-1, -1] += 2.0 * cfg.lam
        return ObjectiveEval(value, grad, float(np.linalg.norm(grad)), hess)

    def poison_gradient(self, params: np.ndarray, intercept: float) -> np.ndarray:
        """Gradient of the poison-set loss sum alone (the beta cross term)."""
        if self.phi_poison is None:
            return np.zeros(self.n_params + 1)
        scores = self.phi_poison @ params + intercept
        _, d1, _ = _loss_terms(self.config.family, scores, self.y_poison)
        g = np.empty(self.n_params + 1)
        g[:-1] = self.phi_poison.T @ d1
        g[-1] = d1.sum()
        return g * self.scale_poison


def spd_factor(hess: np.ndarray, context: str = "hessian solve"):
    """Cholesky factorization with escalating diagonal jitter.

    Returns (cho_factor result, jitter applied). The jitter ladder runs from
    1e-12 to 1e-4 of the mean diagonal magnitude; exhaustion raises
    ConditioningError.
    """
    scale = float(np.mean(np.abs(np.diag(hess)))) or 1.0
    jitter = 0.0
    for _ in range(6):
        try:
            shifted = hess if jitter == 0.0 else hess + jitter * np.eye(hess.shape[0])
            return cho_factor(shifted, lower=True), jitter
        except LinAlgError:
            jitter = 1e-12 * scale if jitter == 0.0 else jitter * 100.0
            if jitter > 1e-4 * scale:
                break
    raise ConditioningError(f"{context}: matrix not positive definite even with jitter")


def solve_spd(hess: np.ndarray, rhs: np.ndarray, context: str = "hessian solve"):
    """One-shot Cholesky solve; see spd_factor for the jitter policy."""
    factor, jitter = spd_factor(hess, context)
    return cho_solve(factor, rhs), (factor, jitter)


def _floor_intercept_curvature(hess: np.ndarray) -> None:
    if hess[-1, -1] < _INTERCEPT_CURVATURE_FLOOR:
        hess[-1, -1] += _INTERCEPT_CURVATURE_FLOOR


def fit(
    config: LearnerConfig,
    clean: LabeledDataset,
    poison: LabeledDataset | None,
    beta: float = 0.0,
    warm_start: ModelState | None = None,
) -> ModelState:
    """Newton's method with Armijo backtracking on the full objective.

    Deterministic given its inputs. Stops when the gradient norm reaches
    config.solver_tol; raises ConvergenceError (carrying the final gradient
    norm) if max_iter Newton steps were not enough or a backtracking line
    search stalls.
    """
    if not beta >= 0.0:
        raise ParameterError(f"beta must be >= 0, got {beta}")
    anchors = None
    if warm_start is not None:
        if warm_start.family != config.family:
            raise ParameterError(
                f"warm start family {warm_start.family!r} != config family {config.family!r}"
            )
        if config.family == "svm_rbf":
            parts = [clean.features]
            if poison is not None and poison.n_samples:
                parts.append(poison.features)
            expected = np.vstack(parts)
            if warm_start.anchors is None or not np.array_equal(warm_start.anchors, expected):
                raise ParameterError(
                    "warm start anchors do not match the training inputs"
                )
            anchors = warm_start.anchors
    problem = _Problem(config, clean, poison, beta, anchors)

    if warm_start is not None:
        params = warm_start.weights.copy()
        intercept = float(warm_start.intercept)
        if params.shape[0] != problem.n_params:
            raise ParameterError(
                f"warm start has {params.shape[0]} parameters, problem needs {problem.n_params}"
            )
    else:
        params = np.zeros(problem.n_params)
        intercept = 0.0

    ev = problem.evaluate(params, intercept, want_hessian=False)
    n_iter = 0
    while ev.grad_norm > config.solver_tol:
        if n_iter >= config.max_iter:
            raise ConvergenceError(
                f"no convergence after {config.max_iter} Newton steps "
                f"(gradient norm {ev.grad_norm:.3e}, tol {config.solver_tol:.1e})",
                grad_norm=ev.grad_norm,
            )
        ev = problem.evaluate(params, intercept, want_hessian=True)
        hess = ev.hessian.copy()
        _floor_intercept_curvature(hess)
        step, _ = solve_spd(hess, -ev.gradient, context=f"{config.family} Newton step")
        slope = float(ev.gradient @ step)
        if slope >= 0.0:
            # not a descent direction; fall back to steepest descent
            step = -ev.gradient
            slope = -float(ev.gradient @ ev.gradient)
        # once the predicted decrease falls below the float resolution of the
        # objective value, the Armijo test is all rounding noise; take the
        # Newton step on trust and let the gradient check decide
        plateau = 64.0 * np.finfo(np.float64).eps * (1.0 + abs(ev.value))
        t = 1.0
        while True:
            cand_params = params + t * step[:-1]
            cand_intercept = intercept + t * step[-1]
            cand = problem.evaluate(cand_params, cand_intercept, want_hessian=False)
            if cand.value <= ev.value + _ARMIJO_C * t * slope or -t * slope <= plateau:
                break
            t *= _ARMIJO_SHRINK
            if t < _ARMIJO_MIN_STEP:
                raise ConvergenceError(
                    f"line search stalled at gradient norm {ev.grad_norm:.3e}",
                    grad_norm=ev.grad_norm,
                )
        params, intercept, ev = cand_params, cand_intercept, cand
        n_iter += 1

    return ModelState(
        family=config.family,
        kind="dual" if config.family == "svm_rbf" else "primal",
        weights=params,
        intercept=intercept,
        beta=float(beta),
        lam=config.lam,
        gamma=config.gamma,
        anchors=problem.anchors,
        n_iter=n_iter,
        grad_norm=ev.grad_norm,
    )


def objective(
    config: LearnerConfig,
    clean: LabeledDataset,
    poison: LabeledDataset | None,
    beta: float,
    state: ModelState,
    want_hessian: bool = False,
) -> ObjectiveEval:
    """Evaluate the full objective at state's parameter point."""
    problem = _Problem(config, clean, poison, beta, state.anchors)
    return problem.evaluate(state.weights, state.intercept, want_hessian=want_hessian)


def decision_scores(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Raw decision values f(x) for rows of x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if state.kind == "dual":
        if x.shape[1] != state.anchors.shape[1]:
            raise ParameterError(
                f"{x.shape[1]} features, kernel anchors have {state.anchors.shape[1]}"
            )
        phi = rbf_kernel(x, state.anchors, state.gamma)
    else:
        if x.shape[1] != state.weights.shape[0]:
            raise ParameterError(
                f"{x.shape[1]} features, model has {state.weights.shape[0]} weights"
            )
        phi = x
    return phi @ state.weights + state.intercept


def predict(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Hard labels in {0, 1}; a score of exactly 0 maps to 1."""
    return (decision_scores(state, x) >= 0.0).astype(np.int64)


def dataset_loss(state: ModelState, ds: LabeledDataset, reduction: Literal["sum", "mean"] = "mean") -> float:
    """Loss of the state on a dataset, summed or averaged."""
    if ds.n_samples == 0:
        raise ParameterError(f"{ds.name} is empty")
    if reduction not in ("sum", "mean"):
        raise ParameterError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    y = _signed_labels(ds)
    scores = decision_scores(state, ds.features)
    loss, _, _ = _loss_terms(state.family, scores, y)
    return float(loss.sum() if reduction == "sum" else loss.mean())


def accuracy(state: ModelState, ds: LabeledDataset) -> float:
    """Fraction of samples whose hard prediction matches the label."""
    if ds.n_samples == 0:
        raise ParameterError(f"{ds.name} is empty")
    _signed_labels(ds)
    return float(np.mean(predict(state, ds.features) == ds.labels))


def per_sample_loss_grads(state: ModelState, ds: LabeledDataset) -> np.ndarray:
    """Rows are per-sample loss gradients w.r.t. (parameters, intercept)."""
    y = _signed_labels(ds)
    if state.kind == "dual":
        phi = rbf_kernel(ds.features, state.anchors, state.gamma)
    else:
        phi = ds.features
    scores = phi @ state.weights + state.intercept
    _, d1, _ = _loss_terms(state.family, scores, y)
    return np.hstack([d1[:, None] * phi, d1[:, None]])


def dataset_loss_grad(state: ModelState, ds: LabeledDataset, reduction: Literal["sum", "mean"] = "sum") -> np.ndarray:
    """Gradient of the (summed or averaged) dataset loss at state."""
    grads = per_sample_loss_grads(state, ds)
    return grads.sum(axis=0) if reduction == "sum" else grads.mean(axis=0)
