#!/usr/bin/env python3

"""
mpgmres.bench
~~~~~~~~~~~~~

Experiment drivers behind the command line.

Contains:
- SpMV: `spmv_bench`, `classify_speedup`, `spmv_bench_suite`.
- Solves: `run_experiment` (median of three runs, CSV artifacts).
- Sweeps: switch point, restart length, right-hand side, polynomial degree,
  and a per-kernel comparison of the fp64 and GMRES-IR solvers.

Sweeps return their table as a list of dict rows and, when the config has an
output directory, write it there as CSV. Time columns are the only ones that
change between identical invocations.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import pathlib
import re
import timeit
from typing import Any, Dict, List, Mapping, Optional, Sequence

from mpgmres.core import CsrMatrix, convert_matrix, convert_vector
from mpgmres.fileio import (
    load_matrix_market,
    summary_row,
    write_convergence_csv,
    write_summary_csv,
    write_table_csv,
)
from mpgmres.gen import generate
from mpgmres.runner import Runner
from mpgmres.spmv import max_nnz_row, nnz_per_row, predicted_speedup, spmv
from mpgmres.types import (
    PrecondKind,
    PrecondSpec,
    Precision,
    Quadrant,
    RhsSpec,
    RunConfig,
    SolverKind,
    SolveReport,
)
from mpgmres.util import Kernel, ResourceError, rng

log = logging.getLogger(__name__)

SPEEDUP_THRESHOLD = 1.7
ROW_THRESHOLD = 15
"""Rows with fewer nonzeros than this are on the left of the quadrant plot."""


Row = Dict[str, Any]


# * SpMV


@dataclasses.dataclass(frozen=True)
class SpmvBenchResult:
    """fp64 and fp32 SpMV timings of one matrix."""

    name: str
    n: int
    nnz: int
    max_nnz_row: int
    t_fp64: float
    t_fp32: float
    predicted: float
    """Model speedup at ``w = nnz / n``, NaN when ``w < 1``."""

    def __post_init__(self):
        if not (self.t_fp64 > 0 and self.t_fp32 > 0):
            raise ValueError("Timings must be positive")

    @property
    def measured_speedup(self) -> float:
        return self.t_fp64 / self.t_fp32

    @property
    def quadrant(self) -> Quadrant:
        return classify_speedup(self)

    def as_row(self) -> Row:
        row = dataclasses.asdict(self)
        row["measured_speedup"] = self.measured_speedup
        row["quadrant"] = self.quadrant.value
        return row


def quadrant_of(max_nnz: int, speedup: float) -> Quadrant:
    """``max_nnz < 15`` is left, ``speedup >= 1.7`` is top."""
    left = max_nnz < ROW_THRESHOLD
    if speedup >= SPEEDUP_THRESHOLD:
        return Quadrant.TopLeft if left else Quadrant.TopRight
    return Quadrant.BottomLeft if left else Quadrant.BottomRight


def classify_speedup(result: SpmvBenchResult) -> Quadrant:
    return quadrant_of(result.max_nnz_row, result.measured_speedup)


def spmv_bench(
    A: CsrMatrix,
    reps: int = 1000,
    trials: int = 3,
    seed: int = 0,
    warmup: int = 50,
    name: str = "",
) -> SpmvBenchResult:
    """Times `reps` SpMVs with a random vector in fp64 and fp32.

    Each precision gets an untimed warm-up of `warmup` calls, then the
    fastest of `trials` timed loops is kept.

    Raises:
        ValueError: `reps` or `trials` is less than 1.
    """
    log.debug(
        "Called with n=%d, reps=%d, trials=%d, seed=%d, warmup=%d",
        A.n_rows,
        reps,
        trials,
        seed,
        warmup,
    )
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}")
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    x64 = rng(seed).uniform(-1.0, 1.0, A.n_cols)
    A64 = convert_matrix(A, Precision.FP64)
    A32 = convert_matrix(A, Precision.FP32)
    x32 = convert_vector(x64, Precision.FP32)

    def best_of(M: CsrMatrix, x: Any) -> float:
        for _ in range(warmup):
            spmv(M, x)
        return min(timeit.repeat(lambda: spmv(M, x), number=reps, repeat=trials))

    t_fp64 = best_of(A64, x64)
    t_fp32 = best_of(A32, x32)
    w = nnz_per_row(A)
    predicted = predicted_speedup(w) if w >= 1 else math.nan
    result = SpmvBenchResult(
        name, A.n_rows, A.nnz, max_nnz_row(A), t_fp64, t_fp32, predicted
    )
    log.info(
        "%s: fp64 %.3gs, fp32 %.3gs, speedup %.2f (model %.2f), %s",
        name or "SpMV",
        t_fp64,
        t_fp32,
        result.measured_speedup,
        predicted,
        result.quadrant.value,
    )
    return result


def spmv_bench_suite(
    matrices: Mapping[str, CsrMatrix],
    reps: int = 1000,
    trials: int = 3,
    seed: int = 0,
    warmup: int = 50,
    out: Optional[pathlib.Path] = None,
) -> List[SpmvBenchResult]:
    """`spmv_bench` over several matrices, optionally written to ``spmv.csv``."""
    results = [
        spmv_bench(A, reps, trials, seed, warmup, name) for name, A in matrices.items()
    ]
    if out is not None:
        _write(out, "spmv", [r.as_row() for r in results])
    return results


# * Solves


def _slug(text: str) -> str:
    return re.sub(r"[^\w.-]+", "_", text).strip("_")


def _write(out: pathlib.Path, stem: str, rows: List[Row]) -> pathlib.Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{_slug(stem)}.csv"
    write_table_csv(rows, path)
    return path


def load_problem(config: RunConfig) -> CsrMatrix:
    """The matrix of `config`, before any reordering."""
    if config.matrix is not None:
        return load_matrix_market(config.matrix)
    return generate(config.gen)  # type: ignore


def run_experiment(
    config: RunConfig, runs: int = 3, A: Optional[CsrMatrix] = None
) -> SolveReport:
    """Solves `runs` times and returns the run with the median solve time.

    With ``config.out`` set, writes ``<name>_<solver>_convergence.csv`` and
    ``<name>_<solver>_summary.csv`` there.
    """
    log.debug("Called with config=%s, runs=%d", config, runs)
    if runs < 1:
        raise ValueError(f"runs must be at least 1, got {runs}")
    runner = Runner(config, A)
    reports = sorted((runner.run() for _ in range(runs)), key=lambda r: r.solve_time)
    report = reports[(len(reports) - 1) // 2]
    if config.out is not None:
        config.out.mkdir(parents=True, exist_ok=True)
        stem = _slug(f"{config.name}_{config.solver.value}")
        write_convergence_csv(report, config.out / f"{stem}_convergence.csv")
        row = summary_row(config.name, runner.original_matrix, config, report)
        write_summary_csv([row], config.out / f"{stem}_summary.csv")
    return report


def _solve(config: RunConfig, A: CsrMatrix, runs: int, **changes: Any) -> SolveReport:
    return run_experiment(config.replace(out=None, **changes), runs, A)


def _result_row(report: SolveReport) -> Row:
    return {
        "total_iters": report.total_iters,
        "iters_fp32": report.iters_fp32,
        "iters_fp64": report.iters_fp64,
        "converged": report.converged,
        "loss_of_accuracy": report.loss_of_accuracy,
        "final_relres": report.final_relres,
        "time_s": report.solve_time,
    }


def _ratio(a: float, b: float) -> float:
    return a / b if b > 0 else math.nan


def sweep_switch_point(
    config: RunConfig, switch_points: Sequence[int], runs: int = 1
) -> List[Row]:
    """GMRES-FD at every switch point, plus fp64 and GMRES-IR baselines.

    The baselines are the first two rows.

    Raises:
        ConfigError: A switch point is not a multiple of ``m``.
    """
    log.debug("Called with config=%s, switch_points=%s", config, switch_points)
    A = load_problem(config)
    rows = []
    for solver in (SolverKind.Double, SolverKind.IR):
        report = _solve(config, A, runs, solver=solver, switch_iter=0)
        rows.append({"solver": solver.value, "switch_iter": "", **_result_row(report)})
    for switch_iter in switch_points:
        report = _solve(config, A, runs, solver=SolverKind.FD, switch_iter=switch_iter)
        rows.append(
            {"solver": "fd", "switch_iter": switch_iter, **_result_row(report)}
        )
    if config.out is not None:
        _write(config.out, f"{config.name}_switch", rows)
    return rows


def sweep_restart(config: RunConfig, sizes: Sequence[int], runs: int = 1) -> List[Row]:
    """fp64 GMRES and GMRES-IR at every restart length.

    Raises:
        ResourceError: The Krylov basis for some ``m`` didn't fit in memory.
    """
    log.debug("Called with config=%s, sizes=%s", config, sizes)
    A = load_problem(config)
    rows = []
    for m in sizes:
        try:
            double = _solve(config, A, runs, solver=SolverKind.Double, m=m)
            ir = _solve(config, A, runs, solver=SolverKind.IR, m=m)
        except MemoryError as exc:
            raise ResourceError(f"Out of memory with restart length m={m}") from exc
        rows.append(
            {
                "m": m,
                "iters_double": double.total_iters,
                "time_double": double.solve_time,
                "converged_double": double.converged,
                "iters_ir": ir.total_iters,
                "time_ir": ir.solve_time,
                "converged_ir": ir.converged,
                "speedup": _ratio(double.solve_time, ir.solve_time),
            }
        )
    if config.out is not None:
        _write(config.out, f"{config.name}_restart", rows)
    return rows


def sweep_rhs(config: RunConfig, kinds: Sequence[RhsSpec], runs: int = 1) -> List[Row]:
    """fp64 GMRES and GMRES-IR for every right-hand side."""
    log.debug("Called with config=%s, kinds=%s", config, kinds)
    A = load_problem(config)
    rows = []
    for rhs in kinds:
        double = _solve(config, A, runs, solver=SolverKind.Double, rhs=rhs)
        ir = _solve(config, A, runs, solver=SolverKind.IR, rhs=rhs)
        rows.append(
            {
                "rhs": str(rhs),
                "time_double": double.solve_time,
                "iters_double": double.total_iters,
                "converged_double": double.converged,
                "time_ir": ir.solve_time,
                "iters_ir": ir.total_iters,
                "converged_ir": ir.converged,
                "speedup": _ratio(double.solve_time, ir.solve_time),
            }
        )
    if config.out is not None:
        _write(config.out, f"{config.name}_rhs", rows)
    return rows


POLY_VARIANTS = (
    (SolverKind.Double, Precision.FP64),
    (SolverKind.Double, Precision.FP32),
    (SolverKind.IR, Precision.FP32),
)
"""Solver and polynomial precision pairs `sweep_poly_degree` compares."""


def sweep_poly_degree(
    config: RunConfig, degrees: Sequence[int], runs: int = 1
) -> List[Row]:
    """Polynomial preconditioning at every degree, see `POLY_VARIANTS`."""
    log.debug("Called with config=%s, degrees=%s", config, degrees)
    A = load_problem(config)
    rows = []
    for degree in degrees:
        for solver, precision in POLY_VARIANTS:
            report = _solve(
                config,
                A,
                runs,
                solver=solver,
                precond=PrecondSpec(PrecondKind.Poly, degree),
                precond_precision=precision,
            )
            rows.append(
                {
                    "degree": degree,
                    "solver": solver.value,
                    "precond_precision": precision.value,
                    **_result_row(report),
                }
            )
    if config.out is not None:
        _write(config.out, f"{config.name}_poly", rows)
    return rows


def compare_kernels(config: RunConfig, runs: int = 3) -> List[Row]:
    """Seconds per kernel category of fp64 GMRES against GMRES-IR."""
    log.debug("Called with config=%s", config)
    A = load_problem(config)
    double = _solve(config, A, runs, solver=SolverKind.Double)
    ir = _solve(config, A, runs, solver=SolverKind.IR)
    rows = []
    for kernel in Kernel:
        t_double = double.kernel_times.get(kernel, 0.0)
        t_ir = ir.kernel_times.get(kernel, 0.0)
        rows.append(
            {
                "kernel": kernel.value,
                "time_double": t_double,
                "time_ir": t_ir,
                "speedup": _ratio(t_double, t_ir),
            }
        )
    rows.append(
        {
            "kernel": "total",
            "time_double": double.solve_time,
            "time_ir": ir.solve_time,
            "speedup": _ratio(double.solve_time, ir.solve_time),
        }
    )
    if config.out is not None:
        _write(config.out, f"{config.name}_kernels", rows)
    return rows
