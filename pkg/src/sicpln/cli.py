"""Command-line interface: ``sicpln simulate | fit | predict | path | bench``.

Each subcommand accepts ``--config FILE`` with flat ``key = value`` lines
(keys are the long flag names); flags given on the command line win. Every
run that writes files also writes a manifest in the same format, so
``sicpln <cmd> --config <manifest>`` repeats it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional

import numpy as np

from . import io
from .exceptions import DataError, NumericError
from .fit import FitOptions, pln_fit, sicpln_fit
from .metrics import (
    BenchRecord,
    aggregate,
    estimation_error,
    prediction_mse,
    tnr,
    write_aggregate,
    write_records,
)
from .model import CountDataset, mean_matrix, predict_marginal
from .penalty import PenaltyConfig
from .simulate import SimScenario, gen_counts, gen_holdout_counts

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
MANIFEST = "manifest.txt"

log = logging.getLogger("sicpln")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        vals = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _str_list(text):
    vals = [t.strip().lower() for t in str(text).split(",") if t.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _add_penalty_flags(p):
    g = p.add_argument_group("penalty and fitting")
    g.add_argument("--lam", type=float, help="penalty weight (default log n)")
    g.add_argument("--eps-start", type=float, default=1.0)
    g.add_argument("--eps-ratio", type=float, default=1e-5 ** (1.0 / 49.0))
    g.add_argument("--eps-steps", type=int, default=50)
    g.add_argument("--zero-threshold", type=float, default=1e-5)
    g.add_argument("--max-vem-iters", type=int, default=200)
    g.add_argument("--max-scoring-iters", type=int, default=100)
    g.add_argument("--tol-elbo", type=float, default=1e-6)
    g.add_argument("--tol-param", type=float, default=1e-7)


def _add_data_flags(p, with_y=True):
    if with_y:
        p.add_argument("--y", help="count matrix CSV (n x p)")
    p.add_argument("--x", help="covariate CSV; an intercept is added if missing")
    p.add_argument("--o", help="offset CSV (log scale, n x p)")
    p.add_argument("--offset-log-col",
                   help="covariate column (name or 0-based index) holding a natural-scale offset")
    p.add_argument("--header", action="store_true", help="CSV files start with a header row")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sicpln", description="Sparse Poisson log-normal regression with the SIC penalty.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("simulate", help="draw a synthetic dataset and its truth")
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--p", type=int, default=4)
    p.add_argument("--d", type=int, default=6, help="covariates besides the intercept")
    p.add_argument("--covariance", choices=("full", "diagonal"), default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replication", type=int, default=0)
    p.add_argument("--intercept", type=float, default=0.0)
    p.add_argument("--offset", type=float, default=0.0, help="constant log offset")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("fit", help="fit a sparse PLN model")
    p.add_argument("--config")
    _add_data_flags(p)
    p.add_argument("--method", choices=("sicpln", "pln"), default="sicpln")
    _add_penalty_flags(p)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("predict", help="predict counts from a fitted model")
    p.add_argument("--config")
    p.add_argument("--fit", help="directory written by `sicpln fit`")
    _add_data_flags(p, with_y=False)
    p.add_argument("--in-sample", action="store_true",
                   help="use the variational means of the training rows")
    p.add_argument("--out", help="output CSV")

    p = sub.add_parser("path", help="coefficient trajectory of one species")
    p.add_argument("--config")
    p.add_argument("--fit", help="directory written by `sicpln fit`")
    p.add_argument("--species", type=int, help="0-based species (column) index")
    p.add_argument("--out", help="output CSV (default stdout)")

    p = sub.add_parser("bench", help="simulation benchmark over a scenario grid")
    p.add_argument("--config")
    p.add_argument("--n", type=_int_list, default=[1000], help="comma-separated sample sizes")
    p.add_argument("--p", type=_int_list, default=[4], help="comma-separated species counts")
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--covariance", type=_str_list, default=["full", "diagonal"])
    p.add_argument("--replications", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", type=_str_list, default=["sicpln", "pln"])
    p.add_argument("--import-baseline", help="CSV of external fits: scenario,replication,method,coef_row,coef_col,value")
    p.add_argument("--holdout", action="store_true", help="score predictions on fresh counts")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true",
                   help="record wall times (makes records.csv non-reproducible)")
    _add_penalty_flags(p)
    p.add_argument("--out", help="output directory")
    return parser


# ---------------------------------------------------------------------------
# config merging


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return parser, args
    cfg = io.read_config(args.config)
    command = cfg.pop("command", args.command)
    if command != args.command:
        parser.error(f"config {args.config} is for '{command}', not '{args.command}'")
    sp = _subparser(parser, args.command)
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in cfg.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            parser.error(f"unknown key {key!r} in {args.config}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in ("true", "false"):
                parser.error(f"{key} must be true or false in {args.config}")
            defaults[key] = value.lower() == "true"
        else:
            try:
                conv = action.type(value) if action.type else value
            except (ValueError, argparse.ArgumentTypeError) as exc:
                parser.error(f"bad value for {key} in {args.config}: {exc}")
            if action.choices is not None and conv not in action.choices:
                parser.error(f"{key} must be one of {sorted(action.choices)}")
            defaults[key] = conv
    sp.set_defaults(**defaults)
    return parser, parser.parse_args(argv)


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _options(args) -> Dict[str, object]:
    return {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}


def _fit_options(args) -> FitOptions:
    try:
        pen = PenaltyConfig(lam=args.lam, eps_start=args.eps_start, eps_ratio=args.eps_ratio,
                            eps_steps=args.eps_steps, zero_threshold=args.zero_threshold)
        return FitOptions(penalty=pen, max_vem_iters=args.max_vem_iters,
                          max_scoring_iters=args.max_scoring_iters,
                          tol_elbo=args.tol_elbo, tol_param=args.tol_param)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    _require(args, "out")
    try:
        sc = SimScenario(n=args.n, p=args.p, d=args.d, covariance_kind=args.covariance,
                         intercept=args.intercept, offset=args.offset,
                         seed=args.seed, replication=args.replication)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sim = gen_counts(sc)
    io.save_dataset(args.out, sim.dataset)
    io.write_matrix(os.path.join(args.out, "B_true.csv"), sim.B)
    io.write_matrix(os.path.join(args.out, "Sigma_true.csv"), sim.Sigma)
    io.write_manifest(os.path.join(args.out, MANIFEST), "simulate", _options(args))


def _load(args):
    if args.o and args.offset_log_col is not None:
        raise UsageError("--o and --offset-log-col are mutually exclusive")
    return io.load_dataset(args.y, args.x, args.o, header=args.header,
                           offset_log_col=args.offset_log_col)


def cmd_fit(args):
    _require(args, "y", "x", "out")
    opts = _fit_options(args)
    data = _load(args)
    fitter = pln_fit if args.method == "pln" else sicpln_fit
    res = fitter(data, opts)
    io.save_fit(args.out, res, {"method": args.method, "n": data.n, "p": data.p, "d": data.d})
    io.write_manifest(os.path.join(args.out, MANIFEST), "fit", _options(args))
    log.info("fit done: %d active coefficients", int(res.active_set[1:].sum()))


def cmd_predict(args):
    _require(args, "fit", "x", "out")
    if args.o and args.offset_log_col is not None:
        raise UsageError("--o and --offset-log-col are mutually exclusive")
    params, vp = io.load_fit(args.fit)
    X, xnames = io.read_matrix(args.x, header=args.header)
    O = None
    if args.offset_log_col is not None:
        X, O = io.split_offset(X, xnames, args.offset_log_col, params.B.shape[1], args.x, args.header)
    elif args.o:
        O = io.read_matrix(args.o, header=args.header)[0]
    X = io.add_intercept(X)
    if X.shape[1] != params.B.shape[0]:
        raise DataError(f"X has {X.shape[1]} columns (with intercept) but B has {params.B.shape[0]} rows")
    if args.in_sample:
        if X.shape[0] != vp.M.shape[0]:
            raise DataError(f"--in-sample needs the {vp.M.shape[0]} training rows, got {X.shape[0]}")
        data = CountDataset(Y=np.zeros_like(vp.M), X=X, O=O)
        Y_hat = mean_matrix(data, params, vp)
    else:
        Y_hat = predict_marginal(X, O, params)
    io.write_matrix(args.out, Y_hat)
    io.write_manifest(args.out + ".manifest.txt", "predict", _options(args))


def cmd_path(args):
    _require(args, "fit", "species")
    rows = io.read_path(os.path.join(args.fit, "path.csv"))
    p = 1 + max((int(r["coef_col"]) for r in rows), default=-1)
    if not 0 <= args.species < p:
        raise UsageError(f"--species must lie in 0..{p - 1}")
    keep = [r for r in rows if int(r["coef_col"]) == args.species]
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(io.PATH_COLUMNS), lineterminator="\n")
        w.writeheader()
        w.writerows(keep)
    finally:
        if args.out:
            fh.close()
    if args.out:
        io.write_manifest(args.out + ".manifest.txt", "path", _options(args))


# --- bench


def _score(sim, B_hat, Y_hat, Y_ref):
    # intercepts are never penalized and are left out like in the TNR
    return (estimation_error(sim.B[1:], B_hat[1:]), tnr(sim.B, B_hat),
            prediction_mse(Y_ref, Y_hat))


def _bench_task(task):
    sc, methods, opts, holdout, timing = task
    sim = gen_counts(sc)
    Y_ref = gen_holdout_counts(sim) if holdout else sim.dataset.Y
    out = []
    for method in methods:
        t0 = time.perf_counter()
        res = (pln_fit if method == "pln" else sicpln_fit)(sim.dataset, opts)
        wall = time.perf_counter() - t0 if timing else 0.0
        if holdout:
            Y_hat = predict_marginal(sim.dataset.X, sim.dataset.O, res.params)
        else:
            Y_hat = mean_matrix(sim.dataset, res.params, res.vp)
        err, rate, mse = _score(sim, res.B, Y_hat, Y_ref)
        out.append(BenchRecord(scenario=sc.scenario_id, method=method.upper(),
                               replication=sc.replication, estimation_error=err,
                               tnr=rate, prediction_mse=mse, wall_time=wall))
    return out


def _read_baseline(path) -> Dict[tuple, Dict[tuple, float]]:
    need = ("scenario", "replication", "method", "coef_row", "coef_col", "value")
    fits: Dict[tuple, Dict[tuple, float]] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(need) <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {','.join(need)}")
        for line, row in enumerate(reader, start=2):
            try:
                key = (row["scenario"], int(row["replication"]), row["method"])
                fits.setdefault(key, {})[(int(row["coef_row"]), int(row["coef_col"]))] = float(row["value"])
            except (TypeError, ValueError):
                raise DataError(f"{path}: malformed row at line {line}") from None
    return fits


def _baseline_records(fits, scenarios, holdout) -> List[BenchRecord]:
    by_key = {(sc.scenario_id, sc.replication): sc for sc in scenarios}
    out = []
    for (sid, rep, method), coefs in sorted(fits.items()):
        sc = by_key.get((sid, rep))
        if sc is None:
            raise DataError(f"baseline fit {sid}/{rep}/{method} is outside the benchmark grid")
        sim = gen_counts(sc)
        B_hat = np.zeros_like(sim.B)
        for (k, j), v in coefs.items():
            if not (0 <= k < B_hat.shape[0] and 0 <= j < B_hat.shape[1]):
                raise DataError(f"baseline coefficient ({k}, {j}) outside {B_hat.shape}")
            B_hat[k, j] = v
        # per-species GLM baselines have no latent layer
        Y_hat = np.exp(sim.dataset.O + sim.dataset.X @ B_hat)
        Y_ref = gen_holdout_counts(sim) if holdout else sim.dataset.Y
        err, rate, mse = _score(sim, B_hat, Y_hat, Y_ref)
        out.append(BenchRecord(scenario=sid, method=method, replication=rep,
                               estimation_error=err, tnr=rate, prediction_mse=mse))
    return out


def cmd_bench(args):
    _require(args, "out")
    if args.replications < 1:
        raise UsageError("--replications must be >= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    bad = [m for m in args.methods if m not in ("sicpln", "pln")]
    if bad:
        raise UsageError(f"unknown method(s) {bad}; choose from sicpln, pln")
    opts = _fit_options(args)
    try:
        scenarios = [SimScenario(n=n, p=p, d=args.d, covariance_kind=kind, seed=args.seed, replication=r)
                     for n in args.n for p in args.p for kind in args.covariance
                     for r in range(args.replications)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    fits = _read_baseline(args.import_baseline) if args.import_baseline else {}
    tasks = [(sc, tuple(args.methods), opts, args.holdout, args.timing) for sc in scenarios]
    records: List[BenchRecord] = []
    if args.jobs == 1:
        for t in tasks:
            records.extend(_bench_task(t))
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            for recs in ex.map(_bench_task, tasks):
                records.extend(recs)
    records.extend(_baseline_records(fits, scenarios, args.holdout))
    records.sort(key=lambda r: (r.scenario, r.method, r.replication))
    os.makedirs(args.out, exist_ok=True)
    write_records(os.path.join(args.out, "records.csv"), records)
    write_aggregate(os.path.join(args.out, "summary.csv"), aggregate(records))
    io.write_manifest(os.path.join(args.out, MANIFEST), "bench", _options(args))


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "path": cmd_path,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        parser, args = _parse(argv)
    except DataError as exc:
        print(f"sicpln: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sicpln {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"sicpln: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"sicpln: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BrokenPipeError:
        # downstream reader (e.g. `head`) closed stdout early
        sys.stderr.close()
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
