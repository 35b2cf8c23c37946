"""Command line front end.

Subcommands: poison, curve, slope, sweep, influence, explain. Inputs come
from an optional JSON config file (sections: data, trigger, learner, grid,
output) with individual flags taking precedence over config values. Relative
data paths resolve against $BACKDOOR_LENS_DATA when it is set.

Exit codes: 0 success, 2 unusable configuration or input data, 3 solver or
conditioning failure, 4 I/O failure (missing or malformed files).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .curves import trace_curve, write_curve_csv
from .datasets import (
    DatasetSplit,
    load_feature_csv,
    load_idx,
    make_blobs,
    subset_binary,
)
from .errors import (
    BackdoorLensError,
    ConditioningError,
    ConfigError,
    ConvergenceError,
    FormatError,
)
from .experiments import SweepGrid, log_grid, run_sweep
from .influence import (
    channel_max,
    hessian_factor,
    input_gradient,
    slope_analytic,
    slope_finite_difference,
    top_influential,
)
from .learners import LearnerConfig, fit
from .rendering import render_curve_svg, render_heatmap_svg, render_saliency_svg
from .triggers import TriggerSpec, make_backdoored_test, poison_dataset

_DATA_ENV = "BACKDOOR_LENS_DATA"


def _resolve_data_path(p: str | Path) -> Path:
    p = Path(p)
    root = os.environ.get(_DATA_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    block = cfg.get(name, {})
    if not isinstance(block, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return block


def _pick(flag_value, block: dict, key: str, default=None):
    if flag_value is not None:
        return flag_value
    return block.get(key, default)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse float list {text!r}") from exc


def _grid_values(raw, flag: str | None, what: str) -> tuple[float, ...]:
    if flag is not None:
        if ":" in flag:
            parts = flag.split(":")
            if len(parts) != 3:
                raise ConfigError(f"--{what} range must be lo:hi:count, got {flag!r}")
            return log_grid(float(parts[0]), float(parts[1]), int(parts[2]))
        return tuple(_floats(flag))
    if raw is None:
        return ()
    if isinstance(raw, dict):
        try:
            return log_grid(float(raw["lo"]), float(raw["hi"]), int(raw["k"]))
        except KeyError as exc:
            raise ConfigError(f"grid {what} object needs lo/hi/k, got {raw}") from exc
    if isinstance(raw, (list, tuple)):
        return tuple(float(v) for v in raw)
    raise ConfigError(f"grid {what} must be a list or lo/hi/k object, got {raw!r}")


def _build_split(args, cfg: dict) -> DatasetSplit:
    block = _section(cfg, "data")
    kind = _pick(getattr(args, "data_kind", None), block, "kind")
    if kind is None:
        raise ConfigError("no data source: set data.kind or --data-kind")
    seed = int(_pick(getattr(args, "data_seed", None), block, "seed", 0))
    if kind == "blobs":
        n_train = int(_pick(getattr(args, "n_per_class", None), block, "n_per_class", 50))
        n_test = int(block.get("n_test_per_class", n_train))
        stddev = float(_pick(getattr(args, "stddev", None), block, "stddev", 0.08))
        centers_raw = _pick(getattr(args, "centers", None), block, "centers", "0.25,0.5,0.75,0.5")
        if isinstance(centers_raw, str):
            vals = _floats(centers_raw)
            if len(vals) != 4:
                raise ConfigError(f"centers need 4 numbers, got {centers_raw!r}")
            centers = ((vals[0], vals[1]), (vals[2], vals[3]))
        else:
            centers = tuple(tuple(float(v) for v in c) for c in centers_raw)
        train = make_blobs(n_train, centers=centers, stddev=stddev, seed=seed)
        test = make_blobs(n_test, centers=centers, stddev=stddev, seed=seed + 1)
        return DatasetSplit(train, test, seed)
    if kind == "idx":
        images = _pick(getattr(args, "images", None), block, "images")
        labels = _pick(getattr(args, "labels", None), block, "labels")
        if images is None or labels is None:
            raise ConfigError("idx data needs data.images and data.labels paths")
        ds = load_idx(_resolve_data_path(images), _resolve_data_path(labels))
        return subset_binary(
            ds,
            int(_pick(getattr(args, "class_a", None), block, "class_a", 7)),
            int(_pick(getattr(args, "class_b", None), block, "class_b", 1)),
            int(_pick(getattr(args, "n_train", None), block, "n_train", 1500)),
            int(_pick(getattr(args, "n_test", None), block, "n_test", 500)),
            seed=seed,
        )
    if kind == "csv":
        path = _pick(getattr(args, "csv", None), block, "path")
        if path is None:
            raise ConfigError("csv data needs data.path")
        label_column = block.get("label_column", "label")
        test_path = block.get("test_path")
        if test_path is not None:
            train = load_feature_csv(_resolve_data_path(path), label_column, binary=True)
            test = load_feature_csv(_resolve_data_path(test_path), label_column, binary=True)
            return DatasetSplit(train, test, seed)
        ds = load_feature_csv(_resolve_data_path(path), label_column, binary=True)
        return subset_binary(
            ds,
            0,
            1,
            int(_pick(getattr(args, "n_train", None), block, "n_train", max(1, ds.n_samples * 3 // 4))),
            int(_pick(getattr(args, "n_test", None), block, "n_test", max(1, ds.n_samples // 4))),
            seed=seed,
        )
    raise ConfigError(f"unknown data kind {kind!r}, expected blobs/idx/csv")


def _infer_image_shape(split: DatasetSplit) -> tuple[int, int, int]:
    d = split.train.n_features
    side = round(d ** 0.5)
    if side * side == d:
        return (side, side, 1)
    return (1, 1, d)


def _build_trigger(args, cfg: dict, split: DatasetSplit) -> TriggerSpec:
    block = dict(_section(cfg, "trigger"))
    kind = _pick(getattr(args, "trigger_kind", None), block, "kind", "patch")
    shape = _pick(getattr(args, "image_shape", None), block, "image_shape")
    if shape is None:
        shape = _infer_image_shape(split)
    elif isinstance(shape, str):
        shape = tuple(int(v) for v in shape.split(","))
    else:
        shape = tuple(int(v) for v in shape)
    seeds = _pick(getattr(args, "trigger_seeds", None), block, "seed")
    if seeds is None:
        classes = sorted(int(c) for c in split.train.classes())
        seeds = {c: 101 + i for i, c in enumerate(classes)}
    elif isinstance(seeds, str):
        vals = [int(v) for v in seeds.split(",")]
        seeds = {i: v for i, v in enumerate(vals)}
    else:
        seeds = {int(k): int(v) for k, v in seeds.items()}
    conf = {"kind": kind, "image_shape": list(shape), "seed": {str(k): v for k, v in seeds.items()}}
    if kind == "patch":
        conf["size"] = int(_pick(getattr(args, "patch_size", None), block, "size", 3))
    else:
        conf["c_m"] = float(_pick(getattr(args, "pattern_intensity", None), block, "c_m", 75.0))
        conf["generator"] = block.get("generator", "checker_noise")
    return TriggerSpec.from_config(conf)


def _build_learner(args, cfg: dict) -> LearnerConfig:
    block = _section(cfg, "learner")
    family = _pick(getattr(args, "family", None), block, "family")
    if family is None:
        raise ConfigError("no learner: set learner.family or --family")
    gamma = _pick(getattr(args, "gamma", None), block, "gamma")
    return LearnerConfig(
        family=family,
        lam=float(_pick(getattr(args, "lam", None), block, "lambda", 1.0)),
        gamma=None if gamma is None else float(gamma),
        solver_tol=float(_pick(getattr(args, "solver_tol", None), block, "solver_tol", 1e-8)),
        max_iter=int(_pick(getattr(args, "max_iter", None), block, "max_iter", 100)),
        reduction=block.get("reduction", "sum"),
        regularize_intercept=bool(block.get("regularize_intercept", False)),
    )


def _out_dir(args, cfg: dict) -> Path:
    block = _section(cfg, "output")
    out = Path(_pick(getattr(args, "out", None), block, "dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _want_svg(args, cfg: dict) -> bool:
    block = _section(cfg, "output")
    if getattr(args, "no_svg", False):
        return False
    return bool(block.get("svg", True))


def _poison_fraction(args, cfg: dict) -> float:
    return float(_pick(getattr(args, "p", None), _section(cfg, "trigger"), "p", 0.1))


def _poison_seed(args, cfg: dict) -> int:
    return int(_pick(getattr(args, "poison_seed", None), _section(cfg, "trigger"), "poison_seed", 0))


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def cmd_poison(args) -> int:
    cfg = _load_config(args.config)
    split = _build_split(args, cfg)
    trigger = _build_trigger(args, cfg, split)
    out = _out_dir(args, cfg)
    poisoned = poison_dataset(split.train, _poison_fraction(args, cfg), trigger, seed=_poison_seed(args, cfg))
    from .datasets import save_feature_csv

    save_feature_csv(poisoned.clean, out / "clean.csv")
    save_feature_csv(poisoned.poison, out / "poison.csv")
    with open(out / "plan.json", "w", encoding="utf-8") as fh:
        json.dump(poisoned.plan.to_config(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _emit(
        {
            "clean": str(out / "clean.csv"),
            "poison": str(out / "poison.csv"),
            "plan": str(out / "plan.json"),
            "n_clean": poisoned.clean.n_samples,
            "n_poison": poisoned.poison.n_samples,
        }
    )
    return 0


def cmd_curve(args) -> int:
    cfg = _load_config(args.config)
    split = _build_split(args, cfg)
    trigger = _build_trigger(args, cfg, split)
    learner = _build_learner(args, cfg)
    out = _out_dir(args, cfg)
    poisoned = poison_dataset(split.train, _poison_fraction(args, cfg), trigger, seed=_poison_seed(args, cfg))
    triggered = make_backdoored_test(split.test, trigger, label_map=poisoned.plan.label_map)
    grid = np.linspace(0.0, 1.0, int(args.beta_steps))
    curve = trace_curve(learner, poisoned, split.test, triggered, beta_grid=grid)
    write_curve_csv(curve, out / "curve.csv")
    paths = {"curve": str(out / "curve.csv")}
    if _want_svg(args, cfg):
        render_curve_svg(curve, out / "curve.svg")
        paths["svg"] = str(out / "curve.svg")
    last = curve.points[-1]
    _emit({**paths, "acc_ts": last.acc_ts, "acc_bt": last.acc_bt, "points": len(curve.points)})
    return 0


def cmd_slope(args) -> int:
    cfg = _load_config(args.config)
    split = _build_split(args, cfg)
    trigger = _build_trigger(args, cfg, split)
    learner = _build_learner(args, cfg)
    poisoned = poison_dataset(split.train, _poison_fraction(args, cfg), trigger, seed=_poison_seed(args, cfg))
    triggered = make_backdoored_test(split.test, trigger, label_map=poisoned.plan.label_map)
    if args.fd is not None:
        result = slope_finite_difference(
            learner, poisoned.clean, poisoned.poison, triggered, step=float(args.fd)
        )
    else:
        w0 = fit(learner, poisoned.clean, poisoned.poison, beta=0.0)
        if poisoned.poison.n_samples == 0:
            from .influence import SlopeResult, slope_theta

            result = SlopeResult(0.0, slope_theta(0.0), "analytic", solve_residual=0.0)
        else:
            result = slope_analytic(learner, w0, poisoned.clean, poisoned.poison, triggered)
    _emit(
        {
            "raw": result.raw,
            "raw_per_test_sample": result.raw / triggered.n_samples,
            "theta": result.theta,
            "method": result.method,
            "fd_step": result.fd_step,
            "solve_residual": result.solve_residual,
        }
    )
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    split = _build_split(args, cfg)
    block = _section(cfg, "grid")
    trig_block = cfg.get("trigger", {})
    if isinstance(trig_block, list):
        triggers = tuple(TriggerSpec.from_config(b) for b in trig_block)
    else:
        triggers = (_build_trigger(args, cfg, split),)
    lambdas = _grid_values(block.get("lambdas"), args.lambdas, "lambdas")
    if not lambdas:
        raise ConfigError("sweep needs grid.lambdas or --lambdas")
    gammas = _grid_values(block.get("gammas"), args.gammas, "gammas")
    families_raw = _pick(args.families, block, "families")
    if families_raw is None:
        families = (_build_learner(args, cfg).family,)
    elif isinstance(families_raw, str):
        families = tuple(v for v in families_raw.split(",") if v)
    else:
        families = tuple(families_raw)
    fractions_raw = _pick(args.fractions, block, "fractions", [0.1])
    fractions = tuple(_floats(fractions_raw)) if isinstance(fractions_raw, str) else tuple(float(v) for v in fractions_raw)
    seeds_raw = _pick(args.sweep_seeds, block, "seeds", [0])
    seeds = (
        tuple(int(v) for v in seeds_raw.split(","))
        if isinstance(seeds_raw, str)
        else tuple(int(v) for v in seeds_raw)
    )
    grid = SweepGrid(
        families=families,
        lambdas=lambdas,
        gammas=gammas,
        fractions=fractions,
        triggers=triggers,
        seeds=seeds,
        solver_tol=float(block.get("solver_tol", 1e-8)),
        max_iter=int(block.get("max_iter", 100)),
    )
    out = _out_dir(args, cfg)
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    records = run_sweep(grid, split, out / "sweep.csv", jobs=jobs)
    payload = {
        "sweep": str(out / "sweep.csv"),
        "cells": len(records),
        "errors": sum(1 for r in records if r.error),
    }
    rbf = [r for r in records if r.family == "svm_rbf" and not r.error]
    if (
        _want_svg(args, cfg)
        and rbf
        and len(rbf) == len(grid.lambdas) * len(grid.gammas)
        and len(grid.lambdas) > 1
        and len(grid.gammas) > 1
    ):
        render_heatmap_svg(rbf, out / "heatmap_acc_bt.svg", value_field="acc_bt")
        payload["heatmap"] = str(out / "heatmap_acc_bt.svg")
    _emit(payload)
    return 0


def cmd_influence(args) -> int:
    cfg = _load_config(args.config)
    split = _build_split(args, cfg)
    trigger = _build_trigger(args, cfg, split)
    learner = _build_learner(args, cfg)
    out = _out_dir(args, cfg)
    poisoned = poison_dataset(split.train, _poison_fraction(args, cfg), trigger, seed=_poison_seed(args, cfg))
    triggered = make_backdoored_test(split.test, trigger, label_map=poisoned.plan.label_map)
    w0 = fit(learner, poisoned.clean, poisoned.poison, beta=0.0)

    from .datasets import LabeledDataset

    n_clean = poisoned.clean.n_samples
    lo = min(poisoned.clean.feature_range[0], poisoned.poison.feature_range[0]) if poisoned.poison.n_samples else poisoned.clean.feature_range[0]
    hi = max(poisoned.clean.feature_range[1], poisoned.poison.feature_range[1]) if poisoned.poison.n_samples else poisoned.clean.feature_range[1]
    feats = (
        np.vstack([poisoned.clean.features, poisoned.poison.features])
        if poisoned.poison.n_samples
        else poisoned.clean.features
    )
    labs = np.concatenate([poisoned.clean.labels, poisoned.poison.labels]) if poisoned.poison.n_samples else poisoned.clean.labels
    train_all = LabeledDataset(feats, labs, (lo, hi), "train-with-poison")
    factor = hessian_factor(learner, w0, poisoned.clean, poisoned.poison)
    records = top_influential(w0, train_all, triggered, int(args.test_index), int(args.top), factor)

    import csv as _csv

    with open(out / "influence.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "train_index", "influence", "is_poison"])
        for rank, rec in enumerate(records, start=1):
            writer.writerow(
                [rank, rec.train_index, "%.17g" % rec.value, int(rec.train_index >= n_clean)]
            )
    _emit(
        {
            "influence": str(out / "influence.csv"),
            "top": [
                {
                    "train_index": r.train_index,
                    "value": r.value,
                    "is_poison": r.train_index >= n_clean,
                }
                for r in records
            ],
        }
    )
    return 0


def cmd_explain(args) -> int:
    cfg = _load_config(args.config)
    split = _build_split(args, cfg)
    trigger = _build_trigger(args, cfg, split)
    learner = _build_learner(args, cfg)
    out = _out_dir(args, cfg)
    poisoned = poison_dataset(split.train, _poison_fraction(args, cfg), trigger, seed=_poison_seed(args, cfg))
    triggered = make_backdoored_test(split.test, trigger, label_map=poisoned.plan.label_map)
    idx = int(args.test_index)
    if not 0 <= idx < triggered.n_samples:
        raise ConfigError(f"--test-index {idx} out of range [0, {triggered.n_samples})")
    w0 = fit(learner, poisoned.clean, poisoned.poison, beta=0.0)
    state = fit(learner, poisoned.clean, poisoned.poison, beta=float(args.beta), warm_start=w0)
    grad = input_gradient(state, triggered.features[idx])
    saliency = channel_max(grad, trigger.image_shape)
    with open(out / "saliency.csv", "w", encoding="utf-8") as fh:
        for row in saliency:
            fh.write(",".join("%.17g" % v for v in row))
            fh.write("\n")
    paths = {"saliency": str(out / "saliency.csv")}
    if _want_svg(args, cfg):
        render_saliency_svg(saliency, out / "saliency.svg")
        paths["svg"] = str(out / "saliency.svg")
    _emit({**paths, "peak": float(np.abs(saliency).max())})
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="output directory (output.dir)")
    p.add_argument("--no-svg", action="store_true", help="skip SVG rendering")
    p.add_argument("--data-kind", choices=["blobs", "idx", "csv"], dest="data_kind")
    p.add_argument("--images", help="IDX image file (data.images)")
    p.add_argument("--labels", help="IDX label file (data.labels)")
    p.add_argument("--csv", help="feature CSV path (data.path)")
    p.add_argument("--class-a", type=int, dest="class_a")
    p.add_argument("--class-b", type=int, dest="class_b")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--n-per-class", type=int, dest="n_per_class")
    p.add_argument("--stddev", type=float)
    p.add_argument("--centers", help="x0,y0,x1,y1 blob centers")
    p.add_argument("--data-seed", type=int, dest="data_seed")
    p.add_argument("--trigger-kind", choices=["patch", "pattern"], dest="trigger_kind")
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--pattern-intensity", type=float, dest="pattern_intensity", help="c_m on the 0..255 scale")
    p.add_argument("--image-shape", dest="image_shape", help="h,w,c")
    p.add_argument("--trigger-seeds", dest="trigger_seeds", help="per-class seeds, class 0 first")
    p.add_argument("--p", type=float, help="poisoning fraction")
    p.add_argument("--poison-seed", type=int, dest="poison_seed")


def _add_learner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=["logistic", "ridge", "svm_squared_hinge", "svm_rbf"])
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--gamma", type=float)
    p.add_argument("--solver-tol", type=float, dest="solver_tol")
    p.add_argument("--max-iter", type=int, dest="max_iter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="backdoor-lens",
        description="Measure how fast a classifier would learn a backdoor.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("poison", help="write a poisoned training set and its plan")
    _add_common(p)
    p.set_defaults(handler=cmd_poison)

    p = sub.add_parser("curve", help="trace a backdoor learning curve over beta")
    _add_common(p)
    _add_learner_flags(p)
    p.add_argument("--beta-steps", type=int, default=21, dest="beta_steps")
    p.set_defaults(handler=cmd_curve)

    p = sub.add_parser("slope", help="slope of the triggered-test loss at beta=0")
    _add_common(p)
    _add_learner_flags(p)
    p.add_argument("--fd", type=float, help="use a forward difference with this beta step")
    p.set_defaults(handler=cmd_slope)

    p = sub.add_parser("sweep", help="hyperparameter sweep with per-cell theta and accuracies")
    _add_common(p)
    _add_learner_flags(p)
    p.add_argument("--lambdas", help="comma list or lo:hi:count (log spaced)")
    p.add_argument("--gammas", help="comma list or lo:hi:count (log spaced)")
    p.add_argument("--families", help="comma list of learner families")
    p.add_argument("--fractions", help="comma list of poisoning fractions")
    p.add_argument("--sweep-seeds", dest="sweep_seeds", help="comma list of poisoning seeds")
    p.add_argument("--jobs", type=int, help="parallel cells (default: cpu count)")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("influence", help="rank training samples by influence on a triggered test point")
    _add_common(p)
    _add_learner_flags(p)
    p.add_argument("--test-index", type=int, default=0, dest="test_index")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(handler=cmd_influence)

    p = sub.add_parser("explain", help="input-gradient saliency at a triggered test point")
    _add_common(p)
    _add_learner_flags(p)
    p.add_argument("--test-index", type=int, default=0, dest="test_index")
    p.add_argument("--beta", type=float, default=1.0)
    p.set_defaults(handler=cmd_explain)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConvergenceError, ConditioningError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except BackdoorLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
