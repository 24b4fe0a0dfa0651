"""Command-line driver for the desk-scale experiments.

Subcommands::

    synth      synthetic problem with geometric singular value decay
    deblur     Gaussian blur plus random inpainting of a test scene
    ct         parallel-beam CT with a perturbed backprojector
    bounds     residual bounds of the sketched solvers (bounds.csv)
    corollary  Monte Carlo check of the expected sketched residual
    timing     median wall time per solver (timing.csv)

Options can also be read from a ``key=value`` file given with
``--config``; keys are option names without the leading dashes, and
options given on the command line take precedence.
"""

import argparse
import csv
import logging
import math
import os
import platform
import shlex
import statistics
import sys
import time

import numpy as np

from . import __version__
from .analysis import bound_report, corollary_check
from .problems import (
    ct_problem,
    deblur_inpaint_problem,
    seed_streams,
    synthetic_decay,
    write_pgm,
)
from .sketch import make_sketch
from .solvers import SOLVERS, FlexibleGolubKahan, SolverConfig
from .truncate import identity_truncation, randomized_rank_truncation, rank_truncation

logger = logging.getLogger("sketchkrylov")

SOLVER_NAMES = ("lsqr", "lsmr", "flsqr", "flsmr", "sflsqr", "sflsmr", "sflsqr-rnd", "sflsmr-rnd")
MATCHED_ONLY = ("lsqr", "lsmr")
FLOAT_FMT = "{:.17g}"


class ConfigError(ValueError):
    """Invalid option combination; reported before any computation."""


# -- argument parsing -------------------------------------------------------

def _solver_list(text):
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in SOLVER_NAMES]
    if bad:
        raise argparse.ArgumentTypeError(
            f"unknown solver(s) {', '.join(bad)}; choose from {', '.join(SOLVER_NAMES)}"
        )
    if not names:
        raise argparse.ArgumentTypeError("empty solver list")
    return names


def _add_solver_options(p, solvers, sketch_kind, maxit=50):
    p.add_argument("--solvers", type=_solver_list, default=list(solvers),
                   help="comma-separated subset of " + ",".join(SOLVER_NAMES))
    p.add_argument("--maxit", type=int, default=maxit)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--window", type=int, default=2,
                   help="orthogonalization window of the sketched solvers (0 = full)")
    p.add_argument("--sketch", choices=("gaussian", "countsketch", "identity"), default=sketch_kind)
    p.add_argument("--sketch-size", type=int, default=None, help="default 2*maxit+1")
    p.add_argument("--discrepancy", action="store_true",
                   help="stop at the discrepancy principle using the known noise norm")
    p.add_argument("--eta", type=float, default=1.01)


def _add_common(p):
    p.add_argument("--config", default=None, help="key=value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="sketchkrylov", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)

    p = sub.add_parser("synth", help="synthetic problem with decaying singular values")
    _add_common(p)
    p.add_argument("--m", type=int, default=1024)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--rho", type=float, default=1.01)
    p.add_argument("--delta", type=float, default=0.10)
    _add_solver_options(p, ("lsqr", "sflsqr", "sflsmr"), "gaussian")

    p = sub.add_parser("deblur", help="blur plus inpainting of a test scene")
    _add_common(p)
    p.add_argument("--n", type=int, default=64, help="image side length")
    p.add_argument("--psf-variance", type=float, default=0.25)
    p.add_argument("--keep", type=float, default=0.8)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--rank", type=int, default=None, help="truncation rank (0 = no truncation)")
    _add_solver_options(p, ("lsqr", "flsqr", "sflsqr", "sflsmr"), "countsketch")

    p = sub.add_parser("ct", help="parallel-beam CT with an unmatched backprojector")
    _add_common(p)
    p.add_argument("--n", type=int, default=64, help="image side length")
    p.add_argument("--angles", type=int, default=60)
    p.add_argument("--rays", type=int, default=96)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--asymmetry", type=float, default=4e-2)
    p.add_argument("--rank", type=int, default=0, help="truncation rank (0 = no truncation)")
    _add_solver_options(p, ("flsqr", "sflsqr", "sflsmr"), "countsketch", maxit=30)

    p = sub.add_parser("bounds", help="residual bounds of the sketched solvers")
    _add_common(p)
    p.add_argument("--m", type=int, default=1024)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--rho", type=float, default=1.01)
    p.add_argument("--delta", type=float, default=0.10)
    p.add_argument("--maxit", type=int, default=20)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--sketch", choices=("gaussian", "countsketch", "identity"), default="gaussian")
    p.add_argument("--sketch-size", type=int, default=None)

    p = sub.add_parser("corollary", help="Monte Carlo mean of the sketched residual")
    _add_common(p)
    p.add_argument("--m", type=int, default=1024)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--rho", type=float, default=1.01)
    p.add_argument("--delta", type=float, default=0.10)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--s", type=int, default=41)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--formula", choices=("s", "k"), default="s",
                   help="numerator of the predicted factor: 1+s/(s-k-1) or 1+k/(s-k-1)")

    p = sub.add_parser("timing", help="median wall time per solver")
    _add_common(p)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--psf-variance", type=float, default=0.25)
    p.add_argument("--keep", type=float, default=0.8)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--repeats", type=int, default=3)
    _add_solver_options(p, ("lsqr", "flsqr", "flsmr", "sflsqr", "sflsmr", "sflsqr-rnd", "sflsmr-rnd"),
                        "countsketch")
    return parser


def read_config(path):
    """Parse a ``key=value`` file; blank lines and ``#`` comments are ignored."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (t.strip() for t in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


def _apply_config(subparser, values):
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        if key in ("config", "experiment"):
            continue
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
        else:
            defaults[key] = raw
        if action.choices is not None and defaults[key] not in action.choices:
            raise ConfigError(f"config key {key!r}: {raw!r} not in {sorted(action.choices)}")
    subparser.set_defaults(**defaults)


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.experiment]
        try:
            _apply_config(sub, read_config(args.config))
        except OSError as exc:
            parser.error(f"cannot read config file: {exc}")
        except ConfigError as exc:
            parser.error(str(exc))
        args = parser.parse_args(argv)
    return args


# -- validation -------------------------------------------------------------

def validate(args):
    """Reject invalid combinations before any computation."""
    exp = args.experiment
    if getattr(args, "maxit", 1) < 1:
        raise ConfigError("--maxit must be at least 1")
    if getattr(args, "window", 0) < 0:
        raise ConfigError("--window must be nonnegative (0 = full orthogonalization)")
    if getattr(args, "sketch_size", None) is not None and args.sketch_size < 1:
        raise ConfigError("--sketch-size must be positive")
    if getattr(args, "eta", 2.0) <= 1:
        raise ConfigError("--eta must exceed 1")
    solvers = getattr(args, "solvers", [])
    if exp == "ct" and args.asymmetry > 0:
        bad = [s for s in solvers if s in MATCHED_ONLY]
        if bad:
            raise ConfigError(
                f"{', '.join(bad)} need the exact transpose but the CT backprojector is "
                f"unmatched (--asymmetry {args.asymmetry}); use flsqr, flsmr, sflsqr or sflsmr, "
                "or pass --asymmetry 0"
            )
    if exp == "synth":
        rnd = [s for s in solvers if s.endswith("-rnd")]
        if rnd:
            raise ConfigError(f"{', '.join(rnd)} truncate image-shaped directions; "
                              "use deblur, ct or timing")
        if args.m < args.n:
            raise ConfigError("--m must be at least --n")
    if exp in ("deblur", "ct", "timing"):
        rank = args.rank
        if rank is not None and not 0 <= rank <= args.n:
            raise ConfigError(f"--rank must lie in [0, {args.n}]")
        if rank == 0 and any(s.endswith("-rnd") for s in solvers):
            raise ConfigError("-rnd solvers need a positive --rank")
    if hasattr(args, "sketch_size"):
        m, n = problem_dims(args)
        s = _sketch_size(args)
        for name in solvers:
            base = name.removesuffix("-rnd")
            d = {"sflsqr": m, "sflsmr": n}.get(base)
            if d is not None and s > d:
                raise ConfigError(f"sketch size {s} exceeds the dimension {d} that {base} sketches")
        if exp == "bounds" and s > n:
            raise ConfigError(f"sketch size {s} exceeds n={n}")
    if exp == "corollary" and args.s <= args.k + 1:
        raise ConfigError(f"--s must exceed --k + 1 (got k={args.k}, s={args.s})")
    if exp == "timing" and args.repeats < 1:
        raise ConfigError("--repeats must be at least 1")


def problem_dims(args):
    """``(m, n)`` of the operator the experiment will build."""
    if args.experiment in ("synth", "bounds", "corollary"):
        return args.m, args.n
    n = args.n * args.n
    if args.experiment == "ct":
        return args.angles * args.rays, n
    return math.ceil(args.keep * n), n


def _sketch_size(args):
    return args.sketch_size if args.sketch_size is not None else 2 * args.maxit + 1


# -- runners ----------------------------------------------------------------


def make_problem(args, streams_seed=None):
    seed = args.seed if streams_seed is None else streams_seed
    if args.experiment in ("synth", "bounds", "corollary"):
        return synthetic_decay(args.m, args.n, args.rho, args.delta, seed)
    if args.experiment in ("deblur", "timing"):
        return deblur_inpaint_problem(args.n, args.psf_variance, args.keep, args.delta,
                                      rank_hint=args.rank or None, seed=seed)
    return ct_problem(args.n, args.angles, args.rays, args.delta, args.asymmetry, seed)


def solver_config(name, args, problem, streams):
    """SolverConfig for one (possibly ``-rnd``) solver name."""
    base = name.removesuffix("-rnd")
    rank = getattr(args, "rank", 0)
    if rank is None:
        rank = problem.rank_hint or 0
    if problem.grid is None or rank == 0 or base in MATCHED_ONLY:
        tau = identity_truncation()
    elif name.endswith("-rnd"):
        tau = randomized_rank_truncation(problem.grid, rank, seed=streams["truncation"])
    else:
        tau = rank_truncation(problem.grid, rank)
    sketch = None
    if base in ("sflsqr", "sflsmr"):
        d = problem.A.m if base == "sflsqr" else problem.A.n
        s = _sketch_size(args)
        # separate streams for the two sketch domains
        sketch = make_sketch(args.sketch, s, d, seed=[streams["sketch"], 0 if base == "sflsqr" else 1])
    return SolverConfig(
        maxit=args.maxit,
        tol=args.tol,
        window=args.window or None,
        tau=tau,
        sketch=sketch,
        eta=args.eta,
        delta_e=problem.delta_e if args.discrepancy else None,
    )


def write_history_csv(path, history):
    res = history.res_rel
    sk = history.sketched_res_rel
    err = history.err_rel
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "res_rel", "sketched_res_rel", "err_rel"])
        for i in range(history.n_iter):
            w.writerow([
                i + 1,
                FLOAT_FMT.format(res[i]),
                FLOAT_FMT.format(sk[i]),
                FLOAT_FMT.format(err[i]) if i < len(err) else "",
            ])


def write_manifest(path, args, streams, records):
    lines = [
        f"version={__version__}",
        f"python={platform.python_version()}",
        f"numpy={np.__version__}",
        f"command={shlex.join(['sketchkrylov'] + sys.argv[1:])}",
    ]
    for key, value in sorted(vars(args).items()):
        if key in ("config", "verbose", "out"):
            continue
        if isinstance(value, list):
            value = ",".join(map(str, value))
        lines.append(f"{key}={'' if value is None else value}")
    for name, value in streams.items():
        lines.append(f"seed.{name}={value}")
    for key, value in records:
        lines.append(f"{key}={value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_solvers(args):
    problem = make_problem(args)
    streams = seed_streams(args.seed)
    configs = {name: solver_config(name, args, problem, streams) for name in args.solvers}
    os.makedirs(args.out, exist_ok=True)
    records = [("problem.delta_e", FLOAT_FMT.format(problem.delta_e))]
    if problem.grid is not None:
        write_pgm(os.path.join(args.out, "x_true.pgm"), problem.grid.unvec(problem.x_true))
    if args.experiment == "ct":
        write_pgm(os.path.join(args.out, "sinogram.pgm"), problem.b.reshape(args.angles, args.rays))
    for name, cfg in configs.items():
        base = name.removesuffix("-rnd")
        t0 = time.perf_counter()
        hist = SOLVERS[base](problem.A, problem.b, cfg, x_true=problem.x_true)
        elapsed = time.perf_counter() - t0
        write_history_csv(os.path.join(args.out, f"{name}.csv"), hist)
        if problem.grid is not None:
            write_pgm(os.path.join(args.out, f"{name}.pgm"), problem.grid.unvec(hist.x))
        records += [
            (f"{name}.iterations", hist.n_iter),
            (f"{name}.stop_reason", hist.stop_reason),
            (f"{name}.stop_iteration", hist.stop_iteration if hist.stop_iteration else ""),
            (f"{name}.breakdown", hist.factorization.breakdown or "none"),
            (f"{name}.seconds", f"{elapsed:.3f}"),
        ]
        print(f"{name:12s} iters={hist.n_iter:4d} res_rel={hist.res_rel[-1]:.4e} "
              f"err_rel={hist.err_rel[-1]:.4e} stop={hist.stop_reason}")
    write_manifest(os.path.join(args.out, "manifest.txt"), args, streams, records)
    return 0


def run_bounds(args):
    problem = make_problem(args)
    streams = seed_streams(args.seed)
    s = _sketch_size(args)
    S_m = make_sketch(args.sketch, s, problem.A.m, seed=[streams["sketch"], 0])
    S_n = make_sketch(args.sketch, s, problem.A.n, seed=[streams["sketch"], 1])
    cfg = SolverConfig(maxit=args.maxit, window=args.window or None)
    report = bound_report(problem.A, problem.b, S_m, S_n, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "bounds.csv")
    cols = ["iter", "r_opt", "r_sflsqr", "r_sflsmr", "bound1", "bound2", "ok1", "ok2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in report.rows():
            w.writerow([FLOAT_FMT.format(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    write_manifest(os.path.join(args.out, "manifest.txt"), args, streams,
                   [("iterations", report.n_iter), ("violations", report.violations)])
    print(f"iterations={report.n_iter} violations={report.violations}")
    return 0


def run_corollary(args):
    problem = make_problem(args)
    streams = seed_streams(args.seed)
    # fixed subspace: the first k flexible Golub-Kahan directions
    fac = FlexibleGolubKahan(problem.A, problem.b, args.k)
    for _ in range(args.k):
        fac.step()
    emp, pred = corollary_check(problem.A, fac.Z, problem.b, args.s, args.trials,
                                seed=streams["sketch"], formula=args.formula)
    rel = abs(emp - pred) / pred
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "corollary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["empirical", "predicted", "rel_err"])
        w.writerow([FLOAT_FMT.format(v) for v in (emp, pred, rel)])
    write_manifest(os.path.join(args.out, "manifest.txt"), args, streams, [])
    print(f"{emp:.10g},{pred:.10g},{rel:.6g}")
    return 0


def run_timing(args):
    problem = make_problem(args)
    streams = seed_streams(args.seed)
    rows = []
    for name in args.solvers:
        base = name.removesuffix("-rnd")
        times = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            # sketch construction is part of the measured cost
            cfg = solver_config(name, args, problem, streams)
            cfg.record_residuals = False
            hist = SOLVERS[base](problem.A, problem.b, cfg)
            times.append(time.perf_counter() - t0)
        rows.append((name, statistics.median(times), hist.n_iter))
        print(f"{name:12s} median={rows[-1][1]:.4f}s iters={hist.n_iter}")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "timing.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["solver", "median_seconds", "repeats", "iterations"])
        for name, med, it in rows:
            w.writerow([name, FLOAT_FMT.format(med), args.repeats, it])
    write_manifest(os.path.join(args.out, "manifest.txt"), args, streams, [])
    return 0


RUNNERS = {
    "synth": run_solvers,
    "deblur": run_solvers,
    "ct": run_solvers,
    "bounds": run_bounds,
    "corollary": run_corollary,
    "timing": run_timing,
}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        validate(args)
        return RUNNERS[args.experiment](args)
    except ConfigError as exc:
        print(f"sketchkrylov {args.experiment}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"sketchkrylov {args.experiment}: I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
