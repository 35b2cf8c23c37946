"""Hyperparameter sweeps over the poisoning landscape.

A sweep walks the product of families, triggers, poisoning fractions, seeds,
lambdas (and gammas for the RBF family) in a fixed deterministic order. Each
cell poisons the training set, fits at beta = 0 for the analytic slope score
theta, refits at beta = 1 for the poisoned model's accuracies, and appends
one CSV row, flushing per row so an interrupted run can resume: rows already
present (matched by their key columns) are skipped, and a torn final line
left by a crash is truncated. Per-cell failures land in the row's error
column without stopping the sweep.

Re-running a finished sweep leaves the file unchanged; byte-for-byte
determinism (the wall_time column aside) is part of the contract and is what
makes sweep outputs safely mergeable.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datasets import DatasetSplit
from .errors import ParameterError, SchemaError
from .influence import slope_analytic, slope_theta
from .learners import FAMILIES, LearnerConfig, accuracy, dataset_loss, fit
from .rendering import render_curve_svg, render_heatmap_svg, render_saliency_svg
from .triggers import TriggerSpec, make_backdoored_test, poison_dataset

__all__ = [
    "SweepGrid",
    "SweepRecord",
    "log_grid",
    "run_sweep",
    "render_curve_svg",
    "render_heatmap_svg",
    "render_saliency_svg",
]

_COLUMNS = (
    "family",
    "lambda",
    "gamma",
    "p",
    "trigger",
    "seed",
    "theta",
    "raw",
    "acc_ts",
    "acc_bt",
    "loss_ts",
    "loss_bt",
    "wall_time",
    "error",
)
_KEY_WIDTH = 6  # the first columns form the resume key


def log_grid(lo: float, hi: float, count: int) -> tuple[float, ...]:
    """Geometric grid with both endpoints exact."""
    if not 0 < lo < hi:
        raise ParameterError(f"need 0 < lo < hi, got ({lo}, {hi})")
    if count < 2:
        raise ParameterError(f"need at least 2 grid values, got {count}")
    values = np.geomspace(lo, hi, count)
    values[0] = lo
    values[-1] = hi
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian sweep definition; gammas apply to the RBF family only."""

    families: tuple[str, ...]
    lambdas: tuple[float, ...]
    gammas: tuple[float, ...] = ()
    fractions: tuple[float, ...] = (0.1,)
    triggers: tuple[TriggerSpec, ...] = ()
    seeds: tuple[int, ...] = (0,)
    solver_tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        if not self.families:
            raise ParameterError("sweep needs at least one family")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ParameterError(f"unknown family {fam!r}")
        if not self.lambdas or any(not v > 0 for v in self.lambdas):
            raise ParameterError(f"lambdas must be nonempty and positive, got {self.lambdas}")
        if any(not v > 0 for v in self.gammas):
            raise ParameterError(f"gammas must be positive, got {self.gammas}")
        if "svm_rbf" in self.families and not self.gammas:
            raise ParameterError("svm_rbf in the sweep requires a gamma grid")
        if not self.fractions or any(not 0.0 <= p < 1.0 for p in self.fractions):
            raise ParameterError(f"fractions must be nonempty, each in [0, 1), got {self.fractions}")
        if not self.triggers:
            raise ParameterError("sweep needs at least one trigger")
        if not self.seeds:
            raise ParameterError("sweep needs at least one seed")

    def cells(self) -> list["_Cell"]:
        out = []
        for family in self.families:
            gammas: Sequence[float | None] = self.gammas if family == "svm_rbf" else (None,)
            for trigger in self.triggers:
                for fraction in self.fractions:
                    for seed in self.seeds:
                        for lam in self.lambdas:
                            for gamma in gammas:
                                out.append(_Cell(family, float(lam), gamma, float(fraction), trigger, int(seed)))
        return out


@dataclass(frozen=True)
class _Cell:
    family: str
    lam: float
    gamma: float | None
    fraction: float
    trigger: TriggerSpec
    seed: int

    def key(self) -> tuple[str, ...]:
        return (
            self.family,
            "%.17g" % self.lam,
            "" if self.gamma is None else "%.17g" % self.gamma,
            "%.17g" % self.fraction,
            self.trigger.descriptor,
            str(self.seed),
        )


@dataclass(frozen=True)
class SweepRecord:
    """One sweep cell's outcome; metric fields are None when error is set."""

    family: str
    lam: float
    gamma: float | None
    fraction: float
    trigger: str
    seed: int
    theta: float | None
    raw: float | None
    acc_ts: float | None
    acc_bt: float | None
    loss_ts: float | None
    loss_bt: float | None
    wall_time: float
    error: str = ""

    def row(self) -> list[str]:
        def num(v: float | None) -> str:
            return "" if v is None else "%.17g" % v

        return [
            self.family,
            "%.17g" % self.lam,
            "" if self.gamma is None else "%.17g" % self.gamma,
            "%.17g" % self.fraction,
            self.trigger,
            str(self.seed),
            num(self.theta),
            num(self.raw),
            num(self.acc_ts),
            num(self.acc_bt),
            num(self.loss_ts),
            num(self.loss_bt),
            "%.6f" % self.wall_time,
            self.error,
        ]

    @classmethod
    def from_row(cls, row: Sequence[str]) -> "SweepRecord":
        def num(s: str) -> float | None:
            return None if s == "" else float(s)

        return cls(
            family=row[0],
            lam=float(row[1]),
            gamma=num(row[2]),
            fraction=float(row[3]),
            trigger=row[4],
            seed=int(row[5]),
            theta=num(row[6]),
            raw=num(row[7]),
            acc_ts=num(row[8]),
            acc_bt=num(row[9]),
            loss_ts=num(row[10]),
            loss_bt=num(row[11]),
            wall_time=float(row[12]),
            error=row[13],
        )


def _parse_existing(path: Path) -> list[list[str]]:
    """Rows already on disk; a torn final row is dropped and the file rewritten."""
    with open(path, newline="", encoding="utf-8") as fh:
        raw = list(csv.reader(fh))
    if not raw:
        return []
    if raw[0] != list(_COLUMNS):
        raise SchemaError(f"{path}: header {raw[0]} does not match a sweep file")

    def intact(row: list[str]) -> bool:
        if len(row) != len(_COLUMNS):
            return False
        try:
            SweepRecord.from_row(row)
        except (ValueError, IndexError):
            return False
        return True

    rows = raw[1:]
    torn = False
    if rows and not intact(rows[-1]):
        rows = rows[:-1]
        torn = True
    for i, row in enumerate(rows):
        if not intact(row):
            raise SchemaError(f"{path}: corrupt row {i + 2} (not just a torn tail)")
    if torn:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_COLUMNS)
            writer.writerows(rows)
    return rows


def _run_cell(cell: _Cell, split: DatasetSplit, grid: SweepGrid) -> SweepRecord:
    start = time.perf_counter()
    try:
        config = LearnerConfig(
            family=cell.family,
            lam=cell.lam,
            gamma=cell.gamma,
            solver_tol=grid.solver_tol,
            max_iter=grid.max_iter,
        )
        poisoned = poison_dataset(split.train, cell.fraction, cell.trigger, seed=cell.seed)
        triggered = make_backdoored_test(split.test, cell.trigger, label_map=poisoned.plan.label_map)
        w0 = fit(config, poisoned.clean, poisoned.poison, beta=0.0)
        if poisoned.poison.n_samples:
            slope = slope_analytic(config, w0, poisoned.clean, poisoned.poison, triggered)
            theta, raw = slope.theta, slope.raw
        else:
            theta, raw = slope_theta(0.0), 0.0
        w1 = fit(config, poisoned.clean, poisoned.poison, beta=1.0, warm_start=w0)
        record = SweepRecord(
            family=cell.family,
            lam=cell.lam,
            gamma=cell.gamma,
            fraction=cell.fraction,
            trigger=cell.trigger.descriptor,
            seed=cell.seed,
            theta=theta,
            raw=raw,
            acc_ts=accuracy(w1, split.test),
            acc_bt=accuracy(w1, triggered),
            loss_ts=dataset_loss(w1, split.test, reduction="mean"),
            loss_bt=dataset_loss(w1, triggered, reduction="mean"),
            wall_time=time.perf_counter() - start,
        )
    except Exception as exc:  # per-cell failures must not kill the sweep
        record = SweepRecord(
            family=cell.family,
            lam=cell.lam,
            gamma=cell.gamma,
            fraction=cell.fraction,
            trigger=cell.trigger.descriptor,
            seed=cell.seed,
            theta=None,
            raw=None,
            acc_ts=None,
            acc_bt=None,
            loss_ts=None,
            loss_bt=None,
            wall_time=time.perf_counter() - start,
            error=f"{type(exc).__name__}: {exc}",
        )
    return record


def run_sweep(
    grid: SweepGrid,
    split: DatasetSplit,
    out_csv: str | Path,
    jobs: int = 1,
) -> list[SweepRecord]:
    """Run (or resume) a sweep, appending one flushed CSV row per cell.

    Cells run in a fixed order, so output is deterministic; with jobs > 1
    cells are computed concurrently but still written in that order. Returns
    the records for every cell of the grid, including resumed ones.
    """
    if jobs < 1:
        raise ParameterError(f"jobs must be >= 1, got {jobs}")
    out_csv = Path(out_csv)
    cells = grid.cells()

    done: dict[tuple[str, ...], SweepRecord] = {}
    if out_csv.exists():
        for row in _parse_existing(out_csv):
            done[tuple(row[:_KEY_WIDTH])] = SweepRecord.from_row(row)
        fh = open(out_csv, "a", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
    else:
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        fh = open(out_csv, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_COLUMNS)
        fh.flush()

    try:
        pending = [c for c in cells if c.key() not in done]
        if jobs == 1 or len(pending) <= 1:
            results: Iterable[SweepRecord] = (_run_cell(c, split, grid) for c in pending)
            for record in results:
                done[tuple(record.row()[:_KEY_WIDTH])] = record
                writer.writerow(record.row())
                fh.flush()
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for record in pool.map(lambda c: _run_cell(c, split, grid), pending):
                    done[tuple(record.row()[:_KEY_WIDTH])] = record
                    writer.writerow(record.row())
                    fh.flush()
    finally:
        fh.close()

    missing = [c.key() for c in cells if c.key() not in done]
    if missing:
        raise SchemaError(f"{out_csv}: rows missing after sweep: {missing[:5]}")
    return [done[c.key()] for c in cells]
