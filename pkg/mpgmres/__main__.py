#!/usr/bin/env python3

"""
mpgmres.__main__
~~~~~~~~~~~~~~~~

Entry point. Command line arguments are merged with the saved defaults and an
optional config file into a `RunConfig`, then handed to `mpgmres.bench`.
"""

import argparse
import logging
import pathlib
import sys
from typing import Any, Dict, List, Mapping, Optional, Sequence

from mpgmres import bench
from mpgmres.core import CsrMatrix
from mpgmres.fileio import config_kwargs, config_pairs, load_matrix_market
from mpgmres.gen import generate
from mpgmres.settings import DEFAULTS, load_settings, save_settings
from mpgmres.types import PRECISIONS, SOLVERS, RhsSpec, RunConfig, StencilSpec
from mpgmres.util import ConfigError, MpgmresError

log = logging.getLogger(__name__)

RUN_KEYS = ("m", "tol", "max_iters", "seed", "out")
"""Saved defaults that are `RunConfig` fields."""


# https://stackoverflow.com/a/18700817
def positive_int(s: str) -> int:
    """Positive integer validator for `argparse.ArgumentParser`."""
    i = int(s)
    if i < 1:
        raise argparse.ArgumentTypeError("A positive number is required")
    return i


def int_list(s: str) -> List[int]:
    """Comma separated nonnegative integers, e.g. ``0,50,100``."""
    try:
        values = [int(v) for v in s.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"'{s}' is not a list of integers") from exc
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError("Nonnegative integers are required")
    return values


def build_parser() -> argparse.ArgumentParser:
    # * Don't use default values, unset flags fall back to settings.json
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log", help="Display logs", action="store_true")
    common.add_argument(
        "--config", type=pathlib.Path, help="key=value file with run settings"
    )
    common.add_argument(
        "--matrix", action="append", help="Matrix Market file of the system matrix"
    )
    common.add_argument(
        "--gen", action="append", help="Generated problem, e.g. laplace2d:50"
    )
    common.add_argument("--solver", choices=SOLVERS)
    common.add_argument("--m", type=positive_int, help="Restart length")
    common.add_argument("--tol", type=float, help="Relative residual tolerance")
    common.add_argument("--max-iters", type=positive_int)
    common.add_argument("--precond", help="none, jacobi:BLOCK or poly:DEGREE")
    common.add_argument("--precond-precision", choices=PRECISIONS)
    common.add_argument(
        "--rcm", action="store_const", const="true", help="Reorder with RCM first"
    )
    common.add_argument("--rhs", help="ones, uniform, normal or file:PATH")
    common.add_argument("--switch-iter", type=int, help="GMRES-FD switch point")
    common.add_argument("--seed", type=int)
    common.add_argument("--override-fp32-floor", action="store_const", const="true")
    common.add_argument("--reps", type=positive_int, help="SpMVs per timed loop")
    common.add_argument("--trials", type=positive_int, help="Timed loops per SpMV")
    common.add_argument("--warmup", type=int, help="Untimed SpMVs before timing")
    common.add_argument("--runs", type=positive_int, help="Solves per measurement")
    common.add_argument("--out", help="Directory for CSV output")
    common.add_argument(
        "--save-defaults",
        action="store_true",
        help="Save m, tol, max-iters, seed, out, reps, trials and warmup",
    )

    ap = argparse.ArgumentParser(
        prog="mpgmres", description="Mixed-precision restarted GMRES experiments"
    )
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="Solve one system")
    switch = sub.add_parser(
        "sweep-switch", parents=[common], help="GMRES-FD over switch points"
    )
    switch.add_argument("--points", type=int_list, required=True)
    restart = sub.add_parser(
        "sweep-restart", parents=[common], help="fp64 and IR over restart lengths"
    )
    restart.add_argument("--sizes", type=int_list, default=[10, 20, 50, 100])
    rhs = sub.add_parser(
        "sweep-rhs", parents=[common], help="fp64 and IR over right-hand sides"
    )
    rhs.add_argument("--kinds", default="ones,uniform,normal")
    sub.add_parser("spmv-bench", parents=[common], help="fp32 vs. fp64 SpMV timings")
    poly = sub.add_parser(
        "sweep-poly", parents=[common], help="Polynomial preconditioner degrees"
    )
    poly.add_argument("--degrees", type=int_list, default=[5, 10, 20, 40])
    sub.add_parser("kernels", parents=[common], help="Per-kernel times of fp64 and IR")
    return ap


def merged_pairs(
    args: argparse.Namespace, settings: Mapping[str, Any]
) -> Dict[str, str]:
    """``key=value`` strings in precedence order settings < config file < CLI."""
    pairs = {key: str(settings[key]) for key in RUN_KEYS}
    if args.config is not None:
        try:
            pairs.update(config_pairs(args.config.read_text()))
        except OSError as exc:
            raise ConfigError(f"Can't read {args.config}: {exc}") from exc
    if args.matrix or args.gen:
        pairs.pop("matrix", None)
        pairs.pop("gen", None)
        if args.matrix:
            pairs["matrix"] = args.matrix[-1]
        if args.gen:
            pairs["gen"] = args.gen[-1]
    cli = {
        "solver": args.solver,
        "m": args.m,
        "tol": args.tol,
        "max_iters": args.max_iters,
        "precond": args.precond,
        "precond_precision": args.precond_precision,
        "rcm": args.rcm,
        "rhs": args.rhs,
        "switch_iter": args.switch_iter,
        "seed": args.seed,
        "out": args.out,
        "override_fp32_floor": args.override_fp32_floor,
    }
    pairs.update({key: str(value) for key, value in cli.items() if value is not None})
    return pairs


def make_config(
    args: argparse.Namespace, settings: Mapping[str, Any], solver: Optional[str]
) -> RunConfig:
    """The run `args` describe, `solver` fills in a missing ``--solver``."""
    if len(args.matrix or ()) + len(args.gen or ()) > 1:
        raise ConfigError(f"{args.command} takes a single --matrix or --gen")
    pairs = merged_pairs(args, settings)
    if solver is not None:
        pairs.setdefault("solver", solver)
    kwargs = config_kwargs(pairs)
    if "solver" not in kwargs:
        raise ConfigError("solver required")
    return RunConfig(**kwargs)


def bench_matrices(args: argparse.Namespace) -> Dict[str, CsrMatrix]:
    matrices = {}
    for path in args.matrix or ():
        matrices[pathlib.Path(path).stem] = load_matrix_market(path)
    for text in args.gen or ():
        spec = StencilSpec.parse(text)
        matrices[str(spec)] = generate(spec)
    if not matrices:
        raise ConfigError("spmv-bench needs at least one --matrix or --gen")
    return matrices


def print_rows(rows: Sequence[Mapping[str, Any]]) -> None:
    for row in rows:
        print("  ".join(f"{key}={value}" for key, value in row.items()))


def run_command(args: argparse.Namespace, settings: Mapping[str, Any]) -> None:
    command = args.command

    def value(key: str) -> Any:
        flag = getattr(args, key)
        return settings[key] if flag is None else flag

    if command == "spmv-bench":
        out = args.out if args.out is not None else settings["out"]
        results = bench.spmv_bench_suite(
            bench_matrices(args),
            value("reps"),
            value("trials"),
            value("seed"),
            value("warmup"),
            pathlib.Path(out) if out else None,
        )
        print_rows([r.as_row() for r in results])
        return

    solver = None if command == "solve" else "double"
    config = make_config(args, settings, solver)
    runs = args.runs or (3 if command in ("solve", "kernels") else 1)
    if command == "solve":
        report = bench.run_experiment(config, runs)
        print(
            f"{config.name} {config.solver.value}: converged={report.converged} "
            f"iters={report.total_iters} (fp32 {report.iters_fp32}, "
            f"fp64 {report.iters_fp64}) relres={report.final_relres:.3e} "
            f"loss_of_accuracy={report.loss_of_accuracy} "
            f"time={report.solve_time:.4f}s"
        )
    elif command == "sweep-switch":
        print_rows(bench.sweep_switch_point(config, args.points, runs))
    elif command == "sweep-restart":
        print_rows(bench.sweep_restart(config, args.sizes, runs))
    elif command == "sweep-rhs":
        kinds = [RhsSpec.parse(k, config.seed) for k in args.kinds.split(",")]
        print_rows(bench.sweep_rhs(config, kinds, runs))
    elif command == "sweep-poly":
        print_rows(bench.sweep_poly_degree(config, args.degrees, runs))
    else:
        print_rows(bench.compare_kernels(config, runs))


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Arguments are parsed here and dispatched to `run_command`."""
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.log:
        logging.basicConfig(level=logging.DEBUG)

    try:
        settings = dict(load_settings())
        if args.save_defaults:
            values = {key: getattr(args, key, None) for key in DEFAULTS}
            save_settings(values)
            settings.update({k: v for k, v in values.items() if v is not None})
        run_command(args, settings)
    except ConfigError as e:
        ap.error(str(e))
    except (MpgmresError, OSError) as e:
        log.error("%s failed: %r", args.command, e)
        print(f"mpgmres: error: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
