"""Command-line surface: gen, train, eval, calc, bench.

Every command is deterministic given its flags and config file; all
emitted CSVs start with a fixed header row and contain no timestamps.
Exit codes: 0 success, 1 training/numeric failure, 2 usage, 3 I/O,
4 memory budget.  The NP_SIZE_CAP environment variable bounds generated
dataset sizes.

Config files are plain UTF-8 ``key = value`` lines with ``#`` comments;
command-line flags override file values, and unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds, data, store, training
from .errors import (BudgetError, DataFormatError, TrainingError, UsageError,
                     WeightsFileError)
from .training import TrainConfig

EXIT_OK = 0
EXIT_TRAIN = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_BUDGET = 4

SPLIT_RATIO = 0.8


def size_cap() -> int:
    raw = os.environ.get("NP_SIZE_CAP")
    return int(raw) if raw else data.DEFAULT_SIZE_CAP


# ---------------------------------------------------------------- config

_RUN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} | {
    "k", "nu", "budget", "router", "baseline"}


def parse_config_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _RUN_KEYS:
            raise UsageError(f"{path}: line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _coerce(key: str, value: str):
    if key in ("loss", "router"):
        return value
    if key in ("baseline", "standardize_targets"):
        if value.lower() not in _BOOL:
            raise UsageError(f"config key {key} expects true/false, got {value!r}")
        return _BOOL[value.lower()]
    if key == "betas":
        parts = [float(v) for v in value.split(",")]
        if len(parts) != 2:
            raise UsageError("betas expects two comma-separated values")
        return (parts[0], parts[1])
    if key == "batch_size":
        return None if value.lower() in ("none", "full") else int(value)
    if key in ("learning_rate", "temperature", "noise_scale", "adam_eps"):
        return float(value)
    return int(value)


def build_config(args, file_values: dict[str, str]) -> tuple[TrainConfig, dict]:
    """Merge config-file values and flag overrides into a TrainConfig plus
    the run-level extras (k, nu, budget, router, baseline)."""
    merged: dict = {key: _coerce(key, val) for key, val in file_values.items()}
    for key in _RUN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    extras = {
        "k": merged.pop("k", 4),
        "nu": merged.pop("nu", 2),
        "budget": merged.pop("budget", None),
        "router": merged.pop("router", "brute"),
        "baseline": merged.pop("baseline", False),
    }
    try:
        cfg = TrainConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    return cfg, extras


# ---------------------------------------------------------------- gen

def _make_dataset(fn: str, n: int, s: int, lo: float, hi: float, hurst: float,
                  seed: int) -> data.Dataset:
    if fn in ("ackley", "rastrigin"):
        grid = data.regular_grid(lo, hi, n, s, max_points=size_cap())
        target = data.ackley(grid) if fn == "ackley" else data.rastrigin(grid)
        return data.Dataset(grid, targets=target)
    if fn == "fbm":
        if n != 1:
            raise UsageError("fbm targets are 1-D (pass --n 1)")
        if s > size_cap():
            raise UsageError(f"{s} samples exceed the size cap of {size_cap()}")
        t = np.linspace(lo, hi, s)[:, None]
        path = data.fbm_path_chunked(hurst, s, seed)
        return data.Dataset(t, targets=path)
    raise UsageError(f"unknown function {fn!r} (expected ackley, rastrigin, fbm)")


def cmd_gen(args) -> int:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = args.range
    dataset = _make_dataset(args.fn, args.n, args.s, lo, hi, args.hurst,
                            args.seed or 0)
    csv_path = out / f"{args.fn}_{args.n}d_s{args.s}.csv"
    data.save_dataset_csv(dataset, csv_path)
    meta = {"fn": args.fn, "n": args.n, "s": args.s, "range": [lo, hi],
            "hurst": args.hurst if args.fn == "fbm" else None,
            "seed": args.seed or 0, "rows": len(dataset)}
    (csv_path.with_suffix(".meta.json")).write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {csv_path} ({len(dataset)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    file_values = parse_config_file(Path(args.config)) if args.config else {}
    cfg, extras = build_config(args, file_values)
    dataset = data.load_dataset_csv(Path(args.data))
    train_set, _ = data.split(dataset, SPLIT_RATIO, seed=cfg.seed)

    ensemble, report = training.run_training(train_set, extras["k"], cfg,
                                             jobs=args.jobs or 1)
    out = Path(args.out or "model")
    routing = {"arity": extras["nu"], "seed": cfg.seed}
    extra = {"split_seed": cfg.seed, "split_ratio": SPLIT_RATIO,
             "data": str(args.data), "loss": cfg.loss}
    store.save_ensemble(ensemble.protos, ensemble.nets, out,
                        routing=routing, extra=extra)
    (out / "train_report.csv").write_text(report.to_csv(), encoding="utf-8")

    if extras["baseline"]:
        base_net, base_report = training.train_baseline(train_set, extras["k"], cfg)
        store.save_weights(base_net, out / "baseline.npw")
        (out / "baseline_report.csv").write_text(base_report.to_csv(),
                                                 encoding="utf-8")
    print(f"wrote model directory {out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _metric_for(dataset: data.Dataset) -> str:
    return "accuracy" if dataset.labels is not None else "mse"


def cmd_eval(args) -> int:
    manifest = store.load_manifest(Path(args.model))
    dataset = data.load_dataset_csv(Path(args.data))
    seed = args.seed if args.seed is not None else int(
        manifest.extra.get("split_seed", 0))
    _, test_set = data.split(dataset, SPLIT_RATIO, seed=seed)

    if args.nu is not None:
        old = manifest.routing or {"seed": 0}
        manifest.routing = {"arity": args.nu, "seed": int(old.get("seed", 0))}
    budget = args.budget or max(manifest.param_counts)
    runner = store.PathwayRunner(manifest, budget, router=args.router)
    preds = np.stack([runner.forward(row) for row in test_set.inputs])

    metric = _metric_for(test_set)
    if metric == "mse":
        value = training.mse(preds, test_set.targets)
        extra_rows = [("mse_raw", value)]
        std = float(np.std(test_set.targets))
        if std > 0:
            extra_rows.append(("mse_standardized", value / std ** 2))
    else:
        value = float(np.mean(np.argmax(preds, axis=1) == test_set.labels))
        extra_rows = [("accuracy", value)]

    out = Path(args.out or args.model)
    out.mkdir(parents=True, exist_ok=True)
    metrics_csv = "metric,value\n" + "".join(
        f"{name},{repr(v)}\n" for name, v in extra_rows)
    (out / "metrics.csv").write_text(metrics_csv, encoding="utf-8")
    (out / "ledger.csv").write_text(store.ledger_report(runner.ledger),
                                    encoding="utf-8")
    print(metrics_csv.strip())
    print(store.ledger_report(runner.ledger).strip())
    return EXIT_OK


# ---------------------------------------------------------------- calc

def _emit_table(headers: list[str], rows: list[list], emit: str) -> None:
    if emit == "csv":
        print(",".join(headers))
        for row in rows:
            print(",".join(str(v) for v in row))
        return
    widths = [max(len(h), *(len(str(r[i])) for r in rows))
              for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))


def cmd_calc(args) -> int:
    emit = args.emit or "table"
    which = args.calculator
    if which == "tree":
        est = bounds.tree_complexity(args.C, 1.0, args.ratio, args.v)
        _emit_table(["height", "leaves", "nodes"],
                    [[est.height, est.leaves, est.nodes]], emit)
    elif which == "dstar":
        _emit_table(["J", "W", "dstar"],
                    [[args.J, args.W, bounds.vc_mlp_dstar(args.J, args.W)]], emit)
    elif which == "vc":
        raw = bounds.vc_pathways_bound_value(args.d, args.n, args.L)
        _emit_table(["raw", "ceiled"],
                    [[repr(raw), bounds.vc_pathways_bound(args.d, args.n, args.L)]],
                    emit)
    elif which == "depthwidth":
        dw = bounds.pathway_depth_width(args.n, args.m, args.eps, args.r)
        _emit_table(["depth", "width"], [[dw.depth, dw.width]], emit)
    elif which == "delta":
        mod = bounds.HolderModulus(args.alpha, args.L)
        value = bounds.theorem_delta(args.n, args.m, args.eps, args.r, mod)
        _emit_table(["delta"], [[repr(value)]], emit)
    elif which == "scaling":
        sc = bounds.curse_scaling(args.n, args.alpha, args.eps)
        _emit_table(["term", "value"],
                    [["relu_mlp_params", repr(sc.relu)],
                     ["pathway_resident_params", repr(sc.pathway_resident)],
                     ["pathway_forward_params", repr(sc.pathway_forward)]], emit)
    elif which == "modinv":
        mod = bounds.HolderModulus(args.alpha, args.L)
        _emit_table(["value"], [[repr(bounds.modulus_inverse(mod, args.s))]], emit)
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown calculator {which!r}")
    return EXIT_OK


# ---------------------------------------------------------------- bench

def _seed_list(base: int, count: int) -> list[int]:
    return [base + i for i in range(count)]


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std())


def bench_regression(fn: str, n: int, s: int, seeds: list[int], k: int,
                     cfg: TrainConfig, jobs: int, hurst: float = 0.3) -> list[list]:
    lo, hi = (0.0, 1.0) if n == 1 else (-1.0, 1.0)
    dataset = _make_dataset(fn, n, s, lo, hi, hurst, 0)
    ours, base = [], []
    for seed in seeds:
        run_cfg = dataclasses.replace(cfg, seed=seed)
        train_set, test_set = data.split(dataset, SPLIT_RATIO, seed=seed)
        ensemble, _ = training.run_training(train_set, k, run_cfg, jobs=jobs)
        ours.append(training.evaluate(ensemble, test_set, "mse"))
        baseline, _ = training.train_baseline(train_set, k, run_cfg)
        base.append(training.evaluate(baseline, test_set, "mse"))
    rows = []
    for name, values in (("pathways", ours), ("baseline", base)):
        mean, std = _mean_std(values)
        rows.append([name, repr(mean), repr(std)])
    return rows


def bench_classify(seeds: list[int], k: int, cfg: TrainConfig, jobs: int,
                   classes: int = 8, dim: int = 16, per_class: int = 400,
                   separation: float = 4.2) -> list[list]:
    dataset = data.gaussian_mixture(classes, dim, per_class, separation, seed=0)
    scores: dict[str, list[float]] = {"weighted": [], "unweighted": [],
                                      "baseline": []}
    for seed in seeds:
        train_set, test_set = data.split(dataset, SPLIT_RATIO, seed=seed)
        for name, loss in (("weighted", training.WEIGHTED_CE),
                           ("unweighted", training.CE)):
            run_cfg = dataclasses.replace(cfg, seed=seed, loss=loss)
            ensemble, _ = training.run_kmeans_training(train_set, k, run_cfg,
                                                       jobs=jobs)
            scores[name].append(training.evaluate(ensemble, test_set, "accuracy"))
        run_cfg = dataclasses.replace(cfg, seed=seed, loss=training.CE)
        baseline, _ = training.train_baseline(train_set, k, run_cfg)
        scores["baseline"].append(training.evaluate(baseline, test_set, "accuracy"))
    rows = []
    for name in ("weighted", "unweighted", "baseline"):
        mean, std = _mean_std(scores[name])
        rows.append([name, repr(mean), repr(std)])
    return rows


def cmd_bench(args) -> int:
    file_values = parse_config_file(Path(args.config)) if args.config else {}
    cfg, extras = build_config(args, file_values)
    seeds = _seed_list(cfg.seed, args.seeds)
    jobs = args.jobs or 1
    if args.task == "regression":
        if args.fn is None:
            raise UsageError("bench regression requires --fn")
        n = 1 if args.fn == "fbm" else args.n
        s = args.s or {1: 10_000, 2: 150, 3: 30}[min(n, 3)]
        rows = bench_regression(args.fn, n, s, seeds, extras["k"], cfg, jobs,
                                hurst=args.hurst)
        _emit_table(["method", "mean_mse", "std_mse"], rows, args.emit or "table")
    else:
        if not args.synthetic:
            raise UsageError("only --synthetic classification data is supported")
        rows = bench_classify(seeds, extras["k"], cfg, jobs,
                              separation=args.separation)
        _emit_table(["method", "mean_accuracy", "std_accuracy"], rows,
                    args.emit or "table")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--jobs", type=int, default=None,
                        help="worker threads for per-cell training")
    parser.add_argument("--emit", choices=["csv", "table"], default=None)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, default=None, help="number of prototypes")
    parser.add_argument("--nu", type=int, default=None, help="routing-tree arity")
    parser.add_argument("--hidden-width", dest="hidden_width", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--epochs-stage1", dest="epochs_stage1", type=int)
    parser.add_argument("--epochs-stage2", dest="epochs_stage2", type=int)
    parser.add_argument("--loss", choices=list(training.LOSSES))


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npath",
        description="prototype-routed network ensembles: data generation, "
                    "two-stage training, budgeted inference, bounds, benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a benchmark dataset CSV")
    _add_common(p)
    p.add_argument("--fn", required=True, choices=["ackley", "rastrigin", "fbm"])
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--s", type=int, required=True,
                   help="grid points per axis (total rows for fbm)")
    p.add_argument("--range", type=float, nargs=2, default=[-1.0, 1.0],
                   metavar=("LO", "HI"))
    p.add_argument("--hurst", type=float, default=0.3)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="two-stage training to a model directory")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True, help="dataset CSV from gen")
    p.add_argument("--baseline", action="store_true", default=None,
                   help="also train the width-w*sqrt(K) single-network baseline")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="budgeted evaluation of a model directory")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--budget", type=int, default=None,
                   help="resident-parameter budget (default: largest pathway)")
    p.add_argument("--router", choices=["brute", "tree"], default="brute")
    p.add_argument("--nu", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calc", help="closed-form complexity/VC calculators")
    _add_common(p)
    csub = p.add_subparsers(dest="calculator", required=True)
    c = csub.add_parser("tree", help="routing-tree size from doubling data")
    c.add_argument("--C", type=float, required=True, help="doubling number")
    c.add_argument("--v", type=int, required=True, help="tree arity")
    c.add_argument("--ratio", type=float, required=True, help="diam/delta")
    c = csub.add_parser("dstar", help="VC bound for one PReLU MLP")
    c.add_argument("--J", type=int, required=True)
    c.add_argument("--W", type=int, required=True)
    c = csub.add_parser("vc", help="VC bound for a prototype-partitioned class")
    c.add_argument("--d", type=int, required=True)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--L", type=int, required=True)
    c = csub.add_parser("depthwidth", help="per-leaf network depth and width")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--m", type=int, required=True)
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--r", type=float, default=0.0)
    c = csub.add_parser("delta", help="covering radius for a target error")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--m", type=int, required=True)
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--r", type=float, default=0.0)
    c.add_argument("--alpha", type=float, default=1.0)
    c.add_argument("--L", type=float, default=1.0)
    c = csub.add_parser("scaling", help="asymptotic parameter-count terms")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--eps", type=float, required=True)
    c = csub.add_parser("modinv", help="inverse Hoelder modulus")
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--L", type=float, required=True)
    c.add_argument("--s", type=float, required=True)
    for name in ("tree", "dstar", "vc", "depthwidth", "delta", "scaling", "modinv"):
        # SUPPRESS keeps the nested parser from clobbering `calc --emit ...`
        csub.choices[name].add_argument("--emit", choices=["csv", "table"],
                                        default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_calc)

    p = sub.add_parser("bench", help="pathways-vs-baseline comparison over seeds")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("task", choices=["regression", "classify"])
    p.add_argument("--fn", choices=["ackley", "rastrigin", "fbm"])
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--s", type=int, default=None)
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.add_argument("--hurst", type=float, default=0.3)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--separation", type=float, default=4.2)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (DataFormatError, WeightsFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
