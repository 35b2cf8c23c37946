"""Sweep execution, resume semantics, and SVG rendering."""

import csv

import numpy as np
import pytest

from backdoor_lens.curves import default_beta_grid, trace_curve
from backdoor_lens.datasets import DatasetSplit, make_blobs
from backdoor_lens.errors import ParameterError, SchemaError, ShapeError
from backdoor_lens.experiments import SweepGrid, SweepRecord, log_grid, run_sweep
from backdoor_lens.learners import LearnerConfig
from backdoor_lens.rendering import (
    render_curve_svg,
    render_heatmap_svg,
    render_saliency_svg,
)

from conftest import BLOB_CENTERS, BLOB_STD, point_trigger


def small_split(n_train=30, n_test=20, seed=7):
    train = make_blobs(n_train, centers=BLOB_CENTERS, stddev=BLOB_STD, seed=seed)
    test = make_blobs(n_test, centers=BLOB_CENTERS, stddev=BLOB_STD, seed=seed + 1)
    return DatasetSplit(train, test, seed)


def small_grid(**overrides):
    base = dict(
        families=("logistic", "ridge"),
        lambdas=(0.1, 1.0),
        fractions=(0.1,),
        triggers=(point_trigger(),),
        seeds=(0,),
    )
    base.update(overrides)
    return SweepGrid(**base)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def strip_wall_time(rows):
    # wall_time is the one nondeterministic column
    idx = rows[0].index("wall_time")
    return [r[:idx] + r[idx + 1 :] for r in rows]


class TestLogGrid:
    def test_endpoints_exact(self):
        grid = log_grid(1e-4, 1e2, 10)
        assert grid[0] == 1e-4
        assert grid[-1] == 1e2
        assert len(grid) == 10

    def test_geometric_spacing(self):
        grid = np.array(log_grid(1.0, 8.0, 4))
        ratios = grid[1:] / grid[:-1]
        assert np.allclose(ratios, 2.0)

    def test_validation(self):
        with pytest.raises(ParameterError):
            log_grid(0.0, 1.0, 5)
        with pytest.raises(ParameterError):
            log_grid(2.0, 1.0, 5)
        with pytest.raises(ParameterError):
            log_grid(1.0, 2.0, 1)


class TestSweepGrid:
    def test_cell_order_is_canonical(self):
        grid = small_grid(lambdas=(1.0, 0.1), seeds=(0, 1))
        cells = grid.cells()
        assert len(cells) == 2 * 2 * 2
        # family varies slowest, lambda fastest, in declared order
        assert [c.family for c in cells[:4]] == ["logistic"] * 4
        assert [c.lam for c in cells[:2]] == [1.0, 0.1]
        assert [c.seed for c in cells[:4]] == [0, 0, 1, 1]

    def test_gammas_only_expand_rbf(self):
        grid = small_grid(
            families=("logistic", "svm_rbf"), gammas=(0.5, 2.0), lambdas=(1.0,)
        )
        cells = grid.cells()
        logistic = [c for c in cells if c.family == "logistic"]
        rbf = [c for c in cells if c.family == "svm_rbf"]
        assert len(logistic) == 1
        assert all(c.gamma is None for c in logistic)
        assert [c.gamma for c in rbf] == [0.5, 2.0]

    def test_validation(self):
        with pytest.raises(ParameterError):
            small_grid(families=())
        with pytest.raises(ParameterError):
            small_grid(families=("nope",))
        with pytest.raises(ParameterError):
            small_grid(lambdas=(0.0,))
        with pytest.raises(ParameterError):
            small_grid(families=("svm_rbf",))
        with pytest.raises(ParameterError):
            small_grid(fractions=(1.0,))
        with pytest.raises(ParameterError):
            small_grid(triggers=())
        with pytest.raises(ParameterError):
            small_grid(seeds=())


class TestRunSweep:
    def test_complete_run_row_per_cell(self, tmp_path):
        grid = small_grid()
        path = tmp_path / "sweep.csv"
        records = run_sweep(grid, small_split(), path)
        rows = read_rows(path)
        assert len(records) == len(grid.cells())
        assert len(rows) == len(records) + 1
        assert rows[0][0] == "family"
        assert all(r.error == "" for r in records)
        assert all(r.acc_ts is not None for r in records)

    def test_records_in_cell_order(self, tmp_path):
        grid = small_grid()
        records = run_sweep(grid, small_split(), tmp_path / "s.csv")
        keys = [(r.family, r.lam) for r in records]
        want = [(c.family, c.lam) for c in grid.cells()]
        assert keys == want

    def test_deterministic_modulo_wall_time(self, tmp_path):
        grid = small_grid()
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_sweep(grid, small_split(), a)
        run_sweep(grid, small_split(), b)
        assert strip_wall_time(read_rows(a)) == strip_wall_time(read_rows(b))

    def test_parallel_matches_serial(self, tmp_path):
        grid = small_grid(seeds=(0, 1))
        serial, parallel = tmp_path / "serial.csv", tmp_path / "par.csv"
        run_sweep(grid, small_split(), serial, jobs=1)
        run_sweep(grid, small_split(), parallel, jobs=4)
        assert strip_wall_time(read_rows(serial)) == strip_wall_time(read_rows(parallel))

    def test_resume_skips_done_cells(self, tmp_path):
        grid = small_grid()
        full, partial = tmp_path / "full.csv", tmp_path / "partial.csv"
        run_sweep(grid, small_split(), full)

        rows = read_rows(full)
        with open(partial, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerows(rows[:3])

        before = read_rows(partial)
        records = run_sweep(grid, small_split(), partial)
        after = read_rows(partial)
        assert after[:3] == before
        assert len(records) == len(grid.cells())
        assert strip_wall_time(after)[:3] == strip_wall_time(rows)[:3]
        # resumed rows land in file-append order but records stay canonical
        assert sorted(map(tuple, strip_wall_time(after))) == sorted(
            map(tuple, strip_wall_time(rows))
        )

    def test_resume_drops_torn_final_row(self, tmp_path):
        grid = small_grid()
        full, torn = tmp_path / "full.csv", tmp_path / "torn.csv"
        run_sweep(grid, small_split(), full)
        text = full.read_text(encoding="utf-8")
        lines = text.splitlines(keepends=True)
        torn.write_text("".join(lines[:3]) + lines[3][: len(lines[3]) // 2], encoding="utf-8")

        records = run_sweep(grid, small_split(), torn)
        assert len(records) == len(grid.cells())
        assert sorted(map(tuple, strip_wall_time(read_rows(torn)))) == sorted(
            map(tuple, strip_wall_time(read_rows(full)))
        )

    def test_corrupt_middle_row_rejected(self, tmp_path):
        grid = small_grid()
        full = tmp_path / "full.csv"
        run_sweep(grid, small_split(), full)
        lines = full.read_text(encoding="utf-8").splitlines()
        lines[2] = "garbage,row"
        bad = tmp_path / "bad.csv"
        bad.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            run_sweep(grid, small_split(), bad)

    def test_foreign_header_rejected(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            run_sweep(small_grid(), small_split(), path)

    def test_cell_failure_lands_in_error_column(self, tmp_path):
        # max_iter=1 at tight tolerance cannot converge the logistic fits
        grid = small_grid(families=("logistic",), lambdas=(1e-9,), max_iter=1)
        records = run_sweep(grid, small_split(), tmp_path / "err.csv")
        assert len(records) == 1
        assert "ConvergenceError" in records[0].error
        assert records[0].theta is None
        rows = read_rows(tmp_path / "err.csv")
        assert "ConvergenceError" in rows[1][-1]

    def test_error_rows_round_trip(self, tmp_path):
        import dataclasses

        grid = small_grid(families=("logistic",), lambdas=(1e-9,), max_iter=1)
        path = tmp_path / "err.csv"
        first = run_sweep(grid, small_split(), path)
        again = run_sweep(grid, small_split(), path)
        # wall_time round-trips at reduced precision; everything else exactly
        assert [dataclasses.replace(r, wall_time=0.0) for r in again] == [
            dataclasses.replace(r, wall_time=0.0) for r in first
        ]

    def test_jobs_validation(self, tmp_path):
        with pytest.raises(ParameterError):
            run_sweep(small_grid(), small_split(), tmp_path / "x.csv", jobs=0)


def blob_curve(steps=5, fraction=0.2, lam=1.0):
    from backdoor_lens.triggers import make_backdoored_test, poison_dataset

    split = small_split()
    poisoned = poison_dataset(split.train, fraction, point_trigger(), seed=3)
    triggered = make_backdoored_test(
        split.test, point_trigger(), label_map=poisoned.plan.label_map
    )
    config = LearnerConfig("logistic", lam=lam)
    return trace_curve(
        config, poisoned, split.test, triggered, beta_grid=default_beta_grid(steps)
    )


class TestCurveSvg:
    def test_writes_two_polylines_per_curve(self, tmp_path):
        curve = blob_curve()
        path = tmp_path / "curve.svg"
        render_curve_svg(curve, path)
        text = path.read_text(encoding="utf-8")
        assert text.startswith("<svg")
        assert text.endswith("\n")
        assert text.count("<polyline") == 2
        assert "stroke-dasharray" in text

    def test_multiple_curves_stack(self, tmp_path):
        curves = [blob_curve(fraction=0.1), blob_curve(fraction=0.3)]
        path = tmp_path / "curves.svg"
        render_curve_svg(curves, path, title="two fractions")
        text = path.read_text(encoding="utf-8")
        assert text.count("<polyline") == 4
        assert "two fractions" in text

    def test_deterministic_bytes(self, tmp_path):
        curve = blob_curve()
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        render_curve_svg(curve, a)
        render_curve_svg(curve, b)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ParameterError):
            render_curve_svg([], tmp_path / "x.svg")


def grid_records(xs=(0.5, 2.0), ys=(0.1, 1.0), value=lambda x, y: x * y):
    return [
        {"gamma": x, "lam": y, "acc_bt": value(x, y)}
        for x in xs
        for y in ys
    ]


class TestHeatmapSvg:
    def test_complete_grid_renders(self, tmp_path):
        path = tmp_path / "heat.svg"
        render_heatmap_svg(grid_records(), path)
        text = path.read_text(encoding="utf-8")
        assert text.count("<rect") >= 4
        assert text.startswith("<svg")

    def test_accepts_sweep_records(self, tmp_path):
        recs = []
        for gamma in (0.5, 2.0):
            for lam in (0.1, 1.0):
                recs.append(
                    SweepRecord(
                        family="svm_rbf", lam=lam, gamma=gamma, fraction=0.1,
                        trigger="patch1", seed=0, theta=0.5, raw=-1.0,
                        acc_ts=0.9, acc_bt=gamma * lam, loss_ts=0.1, loss_bt=0.2,
                        wall_time=0.0,
                    )
                )
        render_heatmap_svg(recs, tmp_path / "heat.svg")

    def test_hole_in_grid_named(self, tmp_path):
        records = grid_records()[:-1]
        with pytest.raises(ShapeError, match="gamma=2"):
            render_heatmap_svg(records, tmp_path / "x.svg")

    def test_duplicate_cell_rejected(self, tmp_path):
        records = grid_records() + grid_records()[:1]
        with pytest.raises(ShapeError, match="duplicate"):
            render_heatmap_svg(records, tmp_path / "x.svg")

    def test_missing_value_rejected(self, tmp_path):
        records = grid_records()
        records[0]["acc_bt"] = None
        with pytest.raises(ShapeError, match="missing"):
            render_heatmap_svg(records, tmp_path / "x.svg")

    def test_flat_grid_renders_neutral(self, tmp_path):
        records = grid_records(value=lambda x, y: 0.5)
        path = tmp_path / "flat.svg"
        render_heatmap_svg(records, path)
        assert "<svg" in path.read_text(encoding="utf-8")

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        render_heatmap_svg(grid_records(), a)
        render_heatmap_svg(grid_records(), b)
        assert a.read_bytes() == b.read_bytes()


class TestSaliencySvg:
    def test_renders_one_rect_per_pixel(self, tmp_path):
        m = np.arange(12.0).reshape(3, 4)
        path = tmp_path / "sal.svg"
        render_saliency_svg(m, path)
        text = path.read_text(encoding="utf-8")
        # one background rect plus one per pixel
        assert text.count("<rect") == 13

    def test_peak_is_black_zero_is_white(self, tmp_path):
        m = np.array([[0.0, 2.0]])
        path = tmp_path / "sal.svg"
        render_saliency_svg(m, path)
        text = path.read_text(encoding="utf-8")
        assert "#000000" in text
        assert "#ffffff" in text

    def test_all_zero_map_is_white(self, tmp_path):
        path = tmp_path / "sal.svg"
        render_saliency_svg(np.zeros((2, 2)), path)
        text = path.read_text(encoding="utf-8")
        assert text.count("#ffffff") == 5

    def test_shape_validation(self, tmp_path):
        with pytest.raises(ParameterError):
            render_saliency_svg(np.zeros(5), tmp_path / "x.svg")
