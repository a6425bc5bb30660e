"""Command line interface.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .estimation import Dataset, FitConfig, fit, predict_link, select_h_opt, stage_one
from .estimator import PartialLinearSingleIndexRegressor
from .exceptions import PLSIMError
from .inference import sigma2_interval
from .simulation import SimDesign, generate, run_study, true_link, write_curve, write_tables
from .smoothing import default_gcv_grid

log = logging.getLogger("plsim")

EXIT_USAGE = 2
EXIT_NUMERIC = 3


class InputError(Exception):
    pass


def read_table(path, columns, log_columns=()) -> dict:
    """Read named numeric columns from a headed CSV file."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise InputError(f"missing column: {missing[0]}")
        pos = {c: header.index(c) for c in columns}
        data = {c: [] for c in columns}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            for c in columns:
                cell = row[pos[c]].strip() if pos[c] < len(row) else ""
                try:
                    value = float(cell)
                except ValueError:
                    raise InputError(f"non-numeric value {cell!r} at row {lineno}, column {c}") from None
                if not math.isfinite(value):
                    raise InputError(f"non-finite value at row {lineno}, column {c}")
                data[c].append(value)
    out = {c: np.asarray(v) for c, v in data.items()}
    for c in log_columns:
        if np.any(out[c] <= 0):
            raise InputError(f"log transform needs positive values in column {c}")
        out[c] = np.log(out[c])
    return out


def _schema(args):
    if not args.response:
        raise InputError("--response is required")
    if not args.index:
        raise InputError("--index needs at least one column")
    if not args.linear:
        raise InputError("--linear needs at least one column")
    cols = [args.response, *args.linear, *args.index]
    if len(set(cols)) != len(cols):
        raise InputError("response, linear and index columns must be disjoint")
    for c in args.log or ():
        if c not in cols:
            raise InputError(f"--log column {c} is not part of the model")
    return cols


def _load_config(args, defaults: dict) -> None:
    """Fill unset options from ``--config`` then from ``defaults``; flags win."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise InputError("config file must hold a JSON object")
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, cfg.get(key, cfg.get(key.replace("_", "-"), default)))


def _read_dataset(args):
    cols = _schema(args)
    table = read_table(args.csv, cols, args.log or ())
    y = table[args.response]
    z = np.column_stack([table[c] for c in args.linear])
    x = np.column_stack([table[c] for c in args.index])
    return y, z, x


def cmd_fit(args) -> int:
    _load_config(args, {"confidence": None, "iterations": 1, "slice_size": 5, "out": ".",
                        "bandwidth": None, "stage_one_bandwidth": 0.5, "linear": None,
                        "index": None, "response": None, "log": None})
    y, z, x = _read_dataset(args)
    model = PartialLinearSingleIndexRegressor(
        slice_size=int(args.slice_size),
        iterations=int(args.iterations),
        stage_one_bandwidth=float(args.stage_one_bandwidth),
        bandwidth=None if args.bandwidth is None else float(args.bandwidth),
        standardize=not args.raw_scale,
    )
    model.fit(x, y, z)
    res = model.fit_
    bw = res.bandwidths
    report = {
        "n": int(y.size),
        "response": args.response,
        "linear": list(args.linear),
        "index": list(args.index),
        "log_transformed": list(args.log or ()),
        "theta": model.theta_.tolist(),
        "beta": model.beta_.tolist(),
        "beta_standardized": model.beta_standardized_.tolist(),
        "index_mean": model.x_mean_.tolist(),
        "index_scale": model.x_scale_.tolist(),
        "sigma2": model.sigma2_,
        "r_squared": model.r_squared_,
        "bandwidths": {"b": bw.b, "h": bw.h, "h1": bw.h1, "h_opt": bw.h_opt},
        "smoother_trace": res.trace_s,
        "residual_dof": {"n": model.residual_dof("n"), "trace": model.residual_dof("trace")},
        "test_statistic": {"n_dof": model.test_statistic("n"), "trace_dof": model.test_statistic("trace")},
        "converged": bool(res.converged),
        "solver_iterations": [s.iterations for s in res.solver],
        "stage_one": {
            "theta": res.stage_one.theta_init.tolist(),
            "beta": res.stage_one.beta_init.coords.tolist(),
        },
    }
    if args.confidence is not None:
        level = float(args.confidence)
        if not 0 < level < 1:
            raise InputError("--confidence must lie in (0, 1)")
        report["confidence"] = {
            "level": level,
            "theta": model.theta_region(level).to_dict(),
            "sigma2": list(sigma2_interval(res.residuals, level)),
        }
        try:
            p = x.shape[1]
            report["confidence"]["beta_standardized"] = [
                model.beta_region(np.eye(p)[:, [j]], level).to_dict() for j in range(p)
            ] if p > 1 else []
        except PLSIMError as exc:
            report["confidence"]["beta_standardized_error"] = str(exc)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fit.json").write_text(json.dumps(report, indent=2) + "\n")
    grid = np.linspace(res.index.min(), res.index.max(), 201)
    write_curve({"t": grid, "g_hat": model.link(grid)}, out / "curve.csv")
    with open(out / "residuals.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "index", "fitted", "residual"])
        fitted = y - res.residuals
        for i in range(y.size):
            w.writerow([i + 1, f"{res.index[i]:.10g}", f"{fitted[i]:.10g}", f"{res.residuals[i]:.10g}"])

    print(f"n={y.size}  R^2={model.r_squared_:.4f}  sigma^2={model.sigma2_:.6g}  converged={res.converged}")
    for name, t in zip(args.linear, model.theta_):
        print(f"  theta[{name}] = {t:.6g}")
    for name, b in zip(args.index, model.beta_):
        print(f"  beta[{name}] = {b:.6g}")
    print(f"  bandwidths: b={bw.b:.4g} h={bw.h:.4g} h1={bw.h1:.4g}")
    print(f"  test statistic theta=0: {report['test_statistic']['trace_dof']:.4f} (trace dof), "
          f"{report['test_statistic']['n_dof']:.4f} (n dof)")
    print(f"  wrote {out / 'fit.json'}")
    return 0


def cmd_gcv(args) -> int:
    _load_config(args, {"slice_size": 5, "out": ".", "grid_min": None, "grid_max": None, "grid_size": 30,
                        "linear": None, "index": None, "response": None, "log": None})
    y, z, x = _read_dataset(args)
    if not args.raw_scale:
        sd = x.std(axis=0, ddof=1)
        if np.any(sd == 0):
            raise InputError("an index covariate is constant")
        x = (x - x.mean(axis=0)) / sd
    data = Dataset(y=y, z=z, x=x)
    s1 = stage_one(data, int(args.slice_size))
    u = x @ s1.beta_init.coords
    size = int(args.grid_size)
    if size < 1:
        raise InputError("--grid-size must be positive")
    if args.grid_min is None and args.grid_max is None:
        grid = default_gcv_grid(u, size)
    else:
        default = default_gcv_grid(u, 2)
        lo = float(args.grid_min) if args.grid_min is not None else default[0]
        hi = float(args.grid_max) if args.grid_max is not None else default[-1]
        if not 0 < lo <= hi:
            raise InputError("grid bounds must satisfy 0 < min <= max")
        grid = np.geomspace(lo, hi, size) if size > 1 else np.array([lo])
    h, grid, scores = select_h_opt(data, s1.beta_init, grid=grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gcv.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bandwidth", "gcv"])
        for g, s in zip(grid, scores):
            w.writerow([f"{g:.10g}", "" if np.isnan(s) else f"{s:.10g}"])
    (out / "gcv.json").write_text(json.dumps({"bandwidth": h, "beta": s1.beta_init.coords.tolist()}, indent=2) + "\n")
    print(f"GCV bandwidth: {h:.6g}")
    return 0


def cmd_simulate(args) -> int:
    _load_config(args, {"mode": "parallel", "reps": 2000, "n": 100, "slice_size": 5, "iterations": 1,
                        "seed": 20100101, "out": ".", "threads": os.cpu_count() or 1})
    if args.mode not in ("parallel", "orthogonal"):
        raise InputError("--mode must be parallel or orthogonal")
    design = SimDesign.for_mode(args.mode, n=int(args.n), reps=int(args.reps), seed=int(args.seed))
    cfg = FitConfig(slice_size=int(args.slice_size), iterations=int(args.iterations))
    grid = np.linspace(0.1, 0.9, 81)
    result = run_study(design, cfg, n_jobs=int(args.threads), curve_grid=grid)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tables(result, out / "tables.csv")
    first = generate(design, 0)
    single = predict_link(fit(first, cfg), first, grid)
    write_curve({"t": grid, "g_true": true_link(grid), "g_hat": single, "g_hat_mean": result.mean_curve},
                out / "curve.csv")
    for r in result.rows + result.angle_rows:
        print(f"{r.method:>20s}  bias/mean={r.bias:.5f}  sd={r.sd:.5f}  mse={r.mse:.5f}")
    print(f"replicates={len(result.replicates)} failures={result.failures}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plsim", description="Partial-linear single-index regression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def schema_args(p):
        p.add_argument("csv")
        p.add_argument("--response")
        p.add_argument("--linear", nargs="+", help="linear covariate columns")
        p.add_argument("--index", nargs="+", help="index covariate columns")
        p.add_argument("--log", nargs="+", help="columns to log-transform")
        p.add_argument("--slice-size", type=int)
        p.add_argument("--raw-scale", action="store_true", help="do not standardize index covariates")
        p.add_argument("--config")
        p.add_argument("--out")

    f = sub.add_parser("fit", help="fit a CSV dataset")
    schema_args(f)
    f.add_argument("--confidence", type=float)
    f.add_argument("--iterations", type=int)
    f.add_argument("--bandwidth", type=float, help="fixed optimal bandwidth (skips GCV)")
    f.add_argument("--stage-one-bandwidth", type=float)
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("gcv", help="GCV bandwidth search")
    schema_args(g)
    g.add_argument("--grid-min", type=float)
    g.add_argument("--grid-max", type=float)
    g.add_argument("--grid-size", type=int)
    g.set_defaults(func=cmd_gcv)

    s = sub.add_parser("simulate", help="Monte Carlo study of the quadratic model")
    s.add_argument("--mode", choices=("parallel", "orthogonal"))
    s.add_argument("--reps", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--slice-size", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PLSIMError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
