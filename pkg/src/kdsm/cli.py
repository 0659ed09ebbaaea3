"""Command-line front end: ``kdsm {gen,fit,eval,grid,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from threadpoolctl import threadpool_limits

from . import io
from .config import BenchConfigFile, EvalConfigFile, FitConfigFile
from .errors import (
    DimensionMismatchError,
    EstimationError,
    InvalidSpecError,
    SingularSystemError,
    StuckChainError,
    UnsupportedError,
)
from .pipeline import evaluate, fit_method, fit_report, fit_with_split
from .synthetic import FAMILIES, make_distribution

log = logging.getLogger("kdsm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
METRIC_HEADER = ["dataset", "model", "metric", "value", "seed", "status"]


class ConfigError(Exception):
    pass


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def _merge(cfg: dict, **overrides) -> dict:
    out = dict(cfg)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _check_writable(path) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise ConfigError(f"cannot write to {path}")


# ----------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    family = args.family or cfg.get("family")
    n = args.n if args.n is not None else cfg.get("n")
    out = args.out or cfg.get("out")
    params = json.loads(args.params) if args.params else cfg.get("params", {})
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
    if not isinstance(n, int) or n < 1 or out is None:
        raise ConfigError("gen needs --n >= 1 and --out")
    _check_writable(out)
    X = make_distribution(family, params).sample(n, seed)
    io.write_csv(out, ["x1", "x2"], X.tolist())
    return EXIT_OK


def cmd_fit(args) -> int:
    raw = _load_json(args.config)
    cfg = FitConfigFile.model_validate(_merge(raw, seed=args.seed))
    _, X = io.read_matrix_csv(cfg.data)
    if X.shape[0] < 2:
        raise ConfigError("data file needs at least two rows")
    for p in (cfg.model_out, cfg.report_out):
        _check_writable(p)
    outcome = fit_with_split(X, cfg.fit, cfg.seed, cfg.validation_fraction, cfg.standardize)
    report = fit_report(outcome, X)
    report["seed"] = cfg.seed
    report["data"] = cfg.data
    io.save_model(outcome.model, cfg.model_out, report["hyperparameters"])
    Path(cfg.report_out).write_text(json.dumps(report, indent=1))
    trace = outcome.hyper.get("tune_trace")
    if trace:
        io.write_dict_rows(Path(cfg.report_out).with_suffix(".trace.csv"), trace)
    return EXIT_OK


def cmd_eval(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    raw = _merge(
        raw,
        model=args.model,
        data=args.data,
        out=args.out,
        family=args.family,
        seed=args.seed,
        metrics=None if args.metrics is None else [m for m in args.metrics.split(",") if m],
    )
    cfg = EvalConfigFile.model_validate(raw)
    _check_writable(cfg.out)
    model = io.load_model(cfg.model)
    _, X = io.read_matrix_csv(cfg.data)
    rows = evaluate(model, X, cfg.metrics, cfg.seed, cfg.family, cfg.family_params, cfg.mala, cfg.n_bootstrap)
    name = Path(cfg.model).stem
    dataset = Path(cfg.data).stem
    io.write_csv(cfg.out, METRIC_HEADER, [(dataset, name, m, v, cfg.seed, st) for m, v, st in rows])
    return EXIT_OK


def cmd_grid(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    model_path = args.model or raw.get("model")
    out = args.out or raw.get("out")
    bounds = args.bounds or raw.get("bounds", [-5.0, 5.0, -5.0, 5.0])
    res = args.resolution if args.resolution is not None else raw.get("resolution", 100)
    clip = args.clip if args.clip is not None else raw.get("clip", -10.0)
    normalized = args.normalized or raw.get("normalized", False)
    if model_path is None or out is None:
        raise ConfigError("grid needs --model and --out")
    if len(bounds) != 4 or bounds[0] >= bounds[1] or bounds[2] >= bounds[3]:
        raise ConfigError("bounds must be x1min x1max x2min x2max with min < max")
    if int(res) < 1:
        raise ConfigError("resolution must be >= 1")
    _check_writable(out)
    model = io.load_model(model_path)
    if model.d != 2:
        raise DimensionMismatchError("grid export needs a two-dimensional model")
    rows = density_grid(model, bounds, int(res), float(clip), normalized)
    io.write_csv(out, ["x1", "x2", "log_density"], rows)
    return EXIT_OK


def density_grid(model, bounds, resolution: int, clip: float = -10.0, normalized: bool = False):
    g1 = np.linspace(bounds[0], bounds[1], resolution)
    g2 = np.linspace(bounds[2], bounds[3], resolution)
    A, B = np.meshgrid(g1, g2, indexing="ij")
    P = np.column_stack([A.ravel(), B.ravel()])
    if normalized:
        vals = model.log_density(P, normalized=True)
    else:
        vals = model.log_density(P)
    vals = np.maximum(np.where(np.isnan(vals), -np.inf, vals), clip)
    return [(p[0], p[1], v) for p, v in zip(P, vals)]


def cmd_bench(args) -> int:
    raw = _load_json(args.config)
    cfg = BenchConfigFile.model_validate(_merge(raw, seed=args.seed))
    _check_writable(cfg.out)
    datasets = {d.name: d for d in cfg.datasets}
    methods = {m.name: m for m in cfg.methods}
    header = ["dataset", "method", "metric", "mean", "std", "n_seeds", "wall_time_mean", "wall_time_std", "status", "message"]
    if cfg.normalize_across_methods:
        header.append("normalized")
    out_rows = []
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.seeds)]
    for pair in cfg.pairs:
        ds, mc = datasets[pair.dataset], methods[pair.method]
        per_metric: dict[str, list[float]] = {}
        walls = []
        try:
            for s in seeds:
                Xtr, Xte = _bench_data(ds, s)
                t0 = time.perf_counter()
                model, _ = fit_method(Xtr, mc, s)
                walls.append(time.perf_counter() - t0)
                for m, v, st in evaluate(model, Xte, cfg.metrics, s, ds.family, ds.params, cfg.mala, cfg.n_bootstrap, X_train=Xtr):
                    if st == "ok":
                        per_metric.setdefault(m, []).append(v)
        except Exception as exc:  # a failed pair is reported and the suite continues
            log.warning("pair %s/%s failed: %s", pair.dataset, pair.method, exc)
            out_rows.append({"dataset": pair.dataset, "method": pair.method, "metric": "", "status": "error", "message": f"{type(exc).__name__}: {exc}"})
            continue
        for m, vals in per_metric.items():
            out_rows.append(
                {
                    "dataset": pair.dataset,
                    "method": pair.method,
                    "metric": m,
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals)),
                    "n_seeds": len(vals),
                    "wall_time_mean": float(np.mean(walls)),
                    "wall_time_std": float(np.std(walls)),
                    "status": "ok",
                    "message": "",
                }
            )
    if cfg.normalize_across_methods:
        _normalize_rows(out_rows)
    io.write_dict_rows(cfg.out, out_rows, header)
    return EXIT_OK


def _normalize_rows(rows) -> None:
    """Divide each mean by the smallest absolute mean among methods on the same dataset and metric."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r.get("status") == "ok":
            groups.setdefault((r["dataset"], r["metric"]), []).append(r)
    for grp in groups.values():
        ref = min(abs(r["mean"]) for r in grp)
        for r in grp:
            r["normalized"] = r["mean"] / ref if ref > 0 else float("nan")


def _bench_data(ds, seed: int):
    if ds.family is not None:
        dist = make_distribution(ds.family, ds.params)
        s_tr, s_te = np.random.SeedSequence(seed).spawn(2)
        return dist.sample(ds.n, np.random.default_rng(s_tr)), dist.sample(ds.n_test, np.random.default_rng(s_te))
    _, X = io.read_matrix_csv(ds.path)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(X.shape[0])
    n_test = min(ds.n_test, X.shape[0] // 2)
    te, tr = perm[:n_test], perm[n_test:]
    mu, sd = X[tr].mean(axis=0), X[tr].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X[tr] - mu) / sd, (X[te] - mu) / sd


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="BLAS thread limit (fallback: KDSM_THREADS)")
    common.add_argument("--reproducible", action="store_true", help="single-threaded, seed defaults to 0")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kdsm", description="Kernel denoising score matching with random features")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="sample a synthetic 2-D dataset to CSV")
    g.add_argument("--family", choices=FAMILIES)
    g.add_argument("--n", type=int)
    g.add_argument("--out")
    g.add_argument("--params", help="JSON object overriding family defaults")

    sub.add_parser("fit", parents=[common], help="fit (or tune) a model from a config file")

    e = sub.add_parser("eval", parents=[common], help="evaluate metrics of a saved model")
    e.add_argument("--model")
    e.add_argument("--data")
    e.add_argument("--out")
    e.add_argument("--metrics", help="comma-separated subset of fisher,loglik,fssd,w1")
    e.add_argument("--family", help="synthetic family supplying the true score")

    r = sub.add_parser("grid", parents=[common], help="export log-density on a 2-D lattice")
    r.add_argument("--model")
    r.add_argument("--out")
    r.add_argument("--bounds", type=float, nargs=4, metavar=("X1MIN", "X1MAX", "X2MIN", "X2MAX"))
    r.add_argument("--resolution", type=int)
    r.add_argument("--clip", type=float)
    r.add_argument("--normalized", action="store_true")

    sub.add_parser("bench", parents=[common], help="run a (dataset, method) benchmark suite")
    return p


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "eval": cmd_eval, "grid": cmd_grid, "bench": cmd_bench}


def _thread_count(args) -> int | None:
    if args.reproducible:
        return 1
    if args.threads is not None:
        return args.threads
    env = os.environ.get("KDSM_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"KDSM_THREADS must be an integer, got {env!r}") from exc
    return None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("fit", "bench") and not args.config:
        print(f"error: {args.command} needs --config", file=sys.stderr)
        return EXIT_CONFIG
    if args.reproducible and args.seed is None:
        args.seed = 0
    try:
        threads = _thread_count(args)
        if threads is not None and threads < 1:
            raise ConfigError("--threads must be >= 1")
        ctx = threadpool_limits(limits=threads) if threads else nullcontext()
        with ctx:
            return COMMANDS[args.command](args)
    # LinAlgError derives from ValueError, so numerical failures are matched first
    except (SingularSystemError, EstimationError, StuckChainError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValidationError, InvalidSpecError, DimensionMismatchError, UnsupportedError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
