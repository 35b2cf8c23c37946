"""Backdoor learning curves: refit along a beta grid and record what moved.

A curve is the trajectory of the regularized learner as the poison term's
weight beta rises from 0 (poison ignored) to 1 (poison counted like clean
data). Each point records mean losses and accuracies on the clean and
triggered test sets plus two parameter-deviation measures against the
beta = 0 optimum: rho (the norm of the current weights) and nu (half of one
minus the cosine between the two weight vectors, so 0 means parallel and 1
means antipodal). Dual states measure both in the kernel-induced norm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import LabeledDataset
from .errors import ConvergenceError, DegenerateGeometryError, ParameterError
from .learners import LearnerConfig, ModelState, accuracy, dataset_loss, fit, rbf_kernel
from .triggers import PoisonedDataset


@dataclass(frozen=True)
class CurvePoint:
    beta: float
    loss_ts: float
    loss_bt: float
    acc_ts: float
    acc_bt: float
    rho: float
    nu: float


@dataclass(frozen=True)
class LearningCurve:
    """One traced curve plus the beta = 0 state it was anchored to."""

    config: LearnerConfig
    fraction: float
    trigger: str
    points: tuple[CurvePoint, ...]
    w0: ModelState

    @property
    def betas(self) -> np.ndarray:
        return np.array([p.beta for p in self.points])

    def column(self, field: str) -> np.ndarray:
        return np.array([getattr(p, field) for p in self.points])


def default_beta_grid(steps: int = 21) -> np.ndarray:
    """Uniform grid over [0, 1] with the endpoints exact."""
    if steps < 2:
        raise ParameterError(f"need at least 2 grid points, got {steps}")
    return np.linspace(0.0, 1.0, steps)


def param_deviation(w0: ModelState, wb: ModelState) -> tuple[float, float]:
    """(rho, nu) of wb relative to w0, intercepts excluded.

    rho is the weight norm of wb; nu = (1 - cos(w0, wb)) / 2 clipped into
    [0, 1]. Dual states use the kernel norm sqrt(a^T K a) and require both
    states to share the same anchor set. Bitwise-identical weights return
    nu exactly 0 before any norm check, so the curve's first point is always
    (rho(w0), 0).
    """
    if w0.family != wb.family or w0.kind != wb.kind:
        raise ParameterError(
            f"cannot compare {w0.family}/{w0.kind} against {wb.family}/{wb.kind}"
        )
    v0, vb = w0.weights, wb.weights
    if v0.shape != vb.shape:
        raise ParameterError(f"weight shapes differ: {v0.shape} vs {vb.shape}")
    if w0.kind == "dual":
        same_anchors = w0.anchors is wb.anchors or np.array_equal(w0.anchors, wb.anchors)
        if not same_anchors:
            raise ParameterError("dual states use different anchor sets")
        gram = rbf_kernel(w0.anchors, w0.anchors, w0.gamma)
        sq0 = max(float(v0 @ (gram @ v0)), 0.0)
        sqb = max(float(vb @ (gram @ vb)), 0.0)
        inner = float(v0 @ (gram @ vb))
    else:
        sq0 = float(v0 @ v0)
        sqb = float(vb @ vb)
        inner = float(v0 @ vb)
    rho = float(np.sqrt(sqb))
    if np.array_equal(v0, vb):
        return rho, 0.0
    n0 = float(np.sqrt(sq0))
    if n0 == 0.0 or rho == 0.0:
        raise DegenerateGeometryError(
            f"angle undefined: weight norms are {n0} and {rho}", rho=rho
        )
    cosine = min(1.0, max(-1.0, inner / (n0 * rho)))
    return rho, 0.5 * (1.0 - cosine)


def trace_curve(
    config: LearnerConfig,
    poisoned: PoisonedDataset,
    test: LabeledDataset,
    triggered_test: LabeledDataset,
    beta_grid: np.ndarray | None = None,
) -> LearningCurve:
    """Fit along the beta grid (warm-started) and collect per-point metrics.

    The grid must rise strictly from exactly 0 to exactly 1. Convergence
    failures are re-raised with the offending beta in the message. An empty
    poison set produces a flat curve: every fit converges in zero steps from
    the warm start, so all points equal the first one exactly.
    """
    if beta_grid is None:
        beta_grid = default_beta_grid()
    grid = np.asarray(beta_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2:
        raise ParameterError(f"beta grid must be 1-D with >= 2 points, got shape {grid.shape}")
    if grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
        raise ParameterError("beta grid must rise strictly from 0.0 to 1.0")
    if test.n_samples == 0 or triggered_test.n_samples == 0:
        raise ParameterError("test and triggered test sets must be nonempty")

    clean, poison = poisoned.clean, poisoned.poison
    points = []
    state = None
    w0 = None
    for beta in grid:
        try:
            state = fit(config, clean, poison, beta=float(beta), warm_start=state)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"curve fit failed at beta={beta:g}: {exc}", grad_norm=exc.grad_norm
            ) from exc
        if w0 is None:
            w0 = state
        rho, nu = param_deviation(w0, state)
        points.append(
            CurvePoint(
                beta=float(beta),
                loss_ts=dataset_loss(state, test, reduction="mean"),
                loss_bt=dataset_loss(state, triggered_test, reduction="mean"),
                acc_ts=accuracy(state, test),
                acc_bt=accuracy(state, triggered_test),
                rho=rho,
                nu=nu,
            )
        )
    return LearningCurve(
        config=config,
        fraction=poisoned.plan.fraction,
        trigger=poisoned.plan.trigger.descriptor,
        points=tuple(points),
        w0=w0,
    )


_CURVE_COLUMNS = ("beta", "loss_ts", "loss_bt", "acc_ts", "acc_bt", "rho", "nu")


def write_curve_csv(curve: LearningCurve, path: str | Path) -> None:
    """One row per grid point, %.17g floats so values round-trip."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_CURVE_COLUMNS)
        for p in curve.points:
            writer.writerow(["%.17g" % getattr(p, col) for col in _CURVE_COLUMNS])


def read_curve_csv(path: str | Path) -> list[CurvePoint]:
    """Inverse of write_curve_csv."""
    from .errors import SchemaError

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(_CURVE_COLUMNS):
            raise SchemaError(f"{path}: unexpected curve header {header}")
        return [CurvePoint(*(float(v) for v in row)) for row in reader]
