#!/usr/bin/env python3

"""
mpgmres.solvers
~~~~~~~~~~~~~~~

Restarted GMRES and its two mixed precision variants.

Contains:
- `gmres_cycle`: One restart cycle, stops on the implicit residual.
- `gmres_restarted`: GMRES(m) in a single precision, explicit residual at
  every restart.
- `gmres_ir`: fp32 cycles refined in fp64 at every restart (GMRES-IR).
- `gmres_fd`: fp32 GMRES(m) for a fixed number of iterations, then fp64 from
  the fp32 solution (GMRES-FD).

All relative residuals are relative to ``||b||``. Convergence is only ever
declared on the explicit residual.
"""

from __future__ import annotations

import logging
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np

from mpgmres.core import (
    CsrMatrix,
    check_same_precision,
    convert_matrix,
    convert_vector,
    gemv,
    norm2,
)
from mpgmres.krylov import (
    ArnoldiWorkspace,
    Operator,
    arnoldi_step,
    givens_update,
    solve_least_squares,
)
from mpgmres.precond import Preconditioner, precond_operator
from mpgmres.spmv import spmv
from mpgmres.types import HistoryEntry, Precision, SolveReport, StopCriteria
from mpgmres.util import ConfigError, DivergenceError, Kernel, KernelTimer, ShapeError

log = logging.getLogger(__name__)

LOSS_FACTOR = 10.0
"""Explicit residual this many times above rtol at claimed convergence is a
loss of accuracy."""

STALL_IMPROVEMENT = 0.01


class CycleResult(NamedTuple):
    x: np.ndarray
    implicit_history: List[float]
    """Implicit relative residual after every step."""

    steps: int
    breakdown: bool
    implicit_converged: bool


class Residual(NamedTuple):
    norm: float
    vector: np.ndarray


def _timed_spmv(A: CsrMatrix, timer: KernelTimer) -> Operator:
    def apply(x: np.ndarray) -> np.ndarray:
        with timer.time(Kernel.SpMV):
            return spmv(A, x)

    return apply


def _is_stalled(relres: Sequence[float]) -> bool:
    """Less than 1% improvement over each of the last two restarts."""
    if len(relres) < 3:
        return False
    a, b, c = relres[-3:]
    keep = 1.0 - STALL_IMPROVEMENT
    return b > keep * a and c > keep * b


def explicit_residual(
    A: CsrMatrix, b: np.ndarray, x: np.ndarray, timer: Optional[KernelTimer] = None
) -> Residual:
    """``b - Ax`` and its 2-norm, computed in the precision of `A`."""
    if b.shape != (A.n_rows,):
        raise ShapeError(f"b has shape {b.shape}, A is {A.n_rows}x{A.n_cols}")
    if timer is None:
        r = b - spmv(A, x)
        return Residual(float(norm2(r)), r)
    with timer.time(Kernel.SpMV):
        Ax = spmv(A, x)
    r = b - Ax
    with timer.time(Kernel.Norm):
        rnorm = norm2(r)
    return Residual(float(rnorm), r)


def gmres_cycle(
    A_op: Union[CsrMatrix, Operator],
    b: np.ndarray,
    x0: np.ndarray,
    criteria: StopCriteria = StopCriteria(),
    *,
    max_steps: Optional[int] = None,
    r0: Optional[np.ndarray] = None,
    M_op: Optional[Operator] = None,
    bnorm: Optional[float] = None,
    timer: Optional[KernelTimer] = None,
    breakdown_tol: Optional[float] = None,
) -> CycleResult:
    """Runs at most ``criteria.m`` Arnoldi steps from `x0`.

    Args:
        A_op: The matrix, or any operator in the precision of `b`.
        max_steps: Fewer steps than ``criteria.m``, used to honour ``max_iters``.
        r0: ``b - A x0`` when the caller already has it.
        M_op: Right preconditioner, ``x = x0 + M^-1 V y``.
        bnorm: Scale of the relative residual, defaults to ``||b||``.

    Returns:
        The new iterate and the implicit relative residuals of every step. The
        cycle ends early on breakdown or once the implicit residual reaches
        ``criteria.rtol``.

    Raises:
        DivergenceError: Non-finite values showed up.
        SingularHessenbergError: A breakdown left a singular triangle behind.
    """
    precision = check_same_precision(b, x0)
    timer = timer if timer is not None else KernelTimer()
    op = _timed_spmv(A_op, timer) if isinstance(A_op, CsrMatrix) else A_op
    steps_max = criteria.m if max_steps is None else min(max_steps, criteria.m)
    if bnorm is None:
        with timer.time(Kernel.Norm):
            bnorm = float(norm2(b))
    if r0 is None:
        r0 = b - op(x0)

    ws = ArnoldiWorkspace(len(b), steps_max, precision, breakdown_tol, timer)
    with timer.time(Kernel.Norm):
        r0_norm = float(norm2(r0))
    if r0_norm == 0.0 or steps_max == 0:
        return CycleResult(x0, [], 0, False, r0_norm == 0.0)
    ws.start(r0)

    threshold = criteria.rtol * bnorm
    scale = bnorm if bnorm > 0 else 1.0
    if M_op is None:
        apply_op = op
    else:
        def apply_op(v: np.ndarray) -> np.ndarray:
            return op(M_op(v))  # type: ignore

    history: List[float] = []
    breakdown = converged = False
    for j in range(steps_max):
        step = arnoldi_step(ws, apply_op)
        resnorm = givens_update(ws.H, j)
        history.append(resnorm / scale)
        converged = resnorm <= threshold
        if step.breakdown or converged:
            breakdown = step.breakdown
            break

    steps = ws.j
    y = solve_least_squares(ws.H, steps)
    with timer.time(Kernel.GemvNoTrans):
        z = gemv(ws.V.active[:, :steps], y)
    if M_op is not None:
        z = M_op(z)
    x = x0 + z
    if not np.all(np.isfinite(x)):
        raise DivergenceError("Iterate is not finite after the cycle")
    return CycleResult(x, history, steps, breakdown, converged)


def _restart_loop(
    A: CsrMatrix,
    b: np.ndarray,
    x: np.ndarray,
    criteria: StopCriteria,
    report: SolveReport,
    timer: KernelTimer,
    *,
    M_op: Optional[Operator] = None,
    start_iter: int = 0,
    max_iters: Optional[int] = None,
    stop_on_stall: bool = False,
) -> np.ndarray:
    """Cycles until the explicit residual reaches rtol or the budget runs out.

    Appends to `report` and returns the last iterate in the precision of `A`.
    Iterations are counted from `start_iter` in the history, `max_iters`
    overrides the budget of `criteria`.
    """
    phase = A.precision
    budget = criteria.max_iters if max_iters is None else max_iters
    with timer.time(Kernel.Norm):
        bnorm = float(norm2(b))
    if bnorm == 0.0:
        report.converged = True
        report.residual_history.append(HistoryEntry(start_iter, 0.0, 0.0, phase))
        return np.zeros_like(b)

    res = explicit_residual(A, b, x, timer)
    relres = res.norm / bnorm
    report.residual_history.append(HistoryEntry(start_iter, relres, relres, phase))
    restarts = [relres]
    op = _timed_spmv(A, timer)
    iters = 0
    while True:
        if relres <= criteria.rtol:
            report.converged = True
            break
        if iters >= budget:
            break
        cycle = gmres_cycle(
            op,
            b,
            x,
            criteria,
            max_steps=budget - iters,
            r0=res.vector,
            M_op=M_op,
            bnorm=bnorm,
            timer=timer,
        )
        for k, implicit in enumerate(cycle.implicit_history, start=1):
            report.residual_history.append(
                HistoryEntry(start_iter + iters + k, implicit, None, phase)
            )
        iters += cycle.steps
        x = cycle.x
        res = explicit_residual(A, b, x, timer)
        relres = res.norm / bnorm
        if not np.isfinite(relres):
            raise DivergenceError(f"Explicit residual is not finite at {iters}")
        report.residual_history[-1].explicit_relres = relres
        restarts.append(relres)

        if cycle.implicit_converged and relres > LOSS_FACTOR * criteria.rtol:
            report.loss_of_accuracy = True
            log.warning(
                "Loss of accuracy at iteration %d: implicit %.3g, explicit %.3g",
                start_iter + iters,
                cycle.implicit_history[-1] if cycle.implicit_history else 0.0,
                relres,
            )
            if not criteria.restart_on_loss:
                break
        if not report.stalled and _is_stalled(restarts):
            report.stalled = True
            log.warning("%s GMRES stalled at relres %.3g", phase.value, relres)
            if stop_on_stall:
                break

    if phase is Precision.FP32:
        report.iters_fp32 += iters
    else:
        report.iters_fp64 += iters
    return x


def _finish(report: SolveReport, timer: KernelTimer, x: np.ndarray) -> SolveReport:
    timer.stop()
    report.x = convert_vector(x, Precision.FP64)
    report.kernel_times = timer.breakdown()
    report.solve_time = timer.elapsed
    log.info(
        "%s after %d iterations (fp32 %d, fp64 %d), final relres %.3g",
        "Converged" if report.converged else "Not converged",
        report.total_iters,
        report.iters_fp32,
        report.iters_fp64,
        report.final_relres,
    )
    return report


def _initial_guess(b: np.ndarray, x0: Optional[np.ndarray]) -> np.ndarray:
    if x0 is None:
        return np.zeros(len(b), dtype=np.float64)
    if x0.shape != b.shape:
        raise ShapeError(f"x0 has shape {x0.shape}, b has {b.shape}")
    return x0


def gmres_restarted(
    A: CsrMatrix,
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    criteria: StopCriteria = StopCriteria(),
    precond: Optional[Preconditioner] = None,
    precision: Optional[Precision] = None,
    timer: Optional[KernelTimer] = None,
) -> SolveReport:
    """GMRES(m) entirely in `precision`, which defaults to that of `A`.

    `A`, `b` and `x0` are converted to `precision` before the clock starts.
    A preconditioner built in another precision is applied through
    `mpgmres.precond.cast_apply`.

    The explicit residual is recomputed at every restart. When the implicit
    residual claims convergence but the explicit one is more than 10x rtol off,
    `SolveReport.loss_of_accuracy` is set and the solve stops, unless
    ``criteria.restart_on_loss`` asks to keep going from the current iterate.
    Running out of ``max_iters`` gives an unconverged report.
    """
    log.debug(
        "Called with n=%d, nnz=%d, criteria=%s, precond=%s, precision=%s",
        A.n_rows,
        A.nnz,
        criteria,
        type(precond).__name__ if precond is not None else None,
        precision,
    )
    precision = precision or A.precision
    x0 = _initial_guess(b, x0)
    A_p = convert_matrix(A, precision)
    b_p = convert_vector(b, precision)
    x_p = convert_vector(x0, precision)
    timer = timer if timer is not None else KernelTimer()
    M_op = precond_operator(precond, A_p, timer) if precond is not None else None

    report = SolveReport(x0)
    timer.start()
    x = _restart_loop(A_p, b_p, x_p, criteria, report, timer, M_op=M_op)
    return _finish(report, timer, x)


def gmres_ir(
    A: CsrMatrix,
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    criteria: StopCriteria = StopCriteria(),
    precond: Optional[Preconditioner] = None,
    timer: Optional[KernelTimer] = None,
) -> SolveReport:
    """GMRES-IR: fp32 GMRES cycles as the inner solver of fp64 refinement.

    Each outer step solves ``A u = r / ||r||`` in fp32 from a zero guess with
    one cycle of at most ``m`` steps, then updates ``x += ||r|| u`` and
    ``r = b - Ax`` in fp64. The inner cycle stops early once its implicit
    residual, scaled back to the outer problem, reaches rtol. Convergence is
    only checked between cycles, so the count may overshoot by up to ``m - 1``.

    The fp32 copy of `A` is made before the clock starts. The fp64 residuals
    and all casts are timed as `Kernel.Other`.

    Raises:
        DivergenceError: The inner solve produced non-finite values.
        PrecisionOverflowError: A correction didn't fit in fp32.
    """
    log.debug(
        "Called with n=%d, nnz=%d, criteria=%s, precond=%s",
        A.n_rows,
        A.nnz,
        criteria,
        type(precond).__name__ if precond is not None else None,
    )
    if A.precision is not Precision.FP64 or Precision.of(b) is not Precision.FP64:
        raise ConfigError("GMRES-IR refines in fp64, pass A and b in fp64")
    x = convert_vector(_initial_guess(b, x0), Precision.FP64)
    A32 = convert_matrix(A, Precision.FP32)
    timer = timer if timer is not None else KernelTimer()
    M_op = precond_operator(precond, A32, timer) if precond is not None else None
    op = _timed_spmv(A32, timer)
    phase = Precision.FP32
    report = SolveReport(x)
    history = report.residual_history

    timer.start()
    bnorm = float(norm2(b))
    if bnorm == 0.0:
        report.converged = True
        history.append(HistoryEntry(0, 0.0, 0.0, phase))
        return _finish(report, timer, np.zeros_like(b))
    res = explicit_residual(A, b, x)
    relres = res.norm / bnorm
    history.append(HistoryEntry(0, relres, relres, phase))
    restarts = [relres]
    iters = 0
    while True:
        if relres <= criteria.rtol:
            report.converged = True
            break
        if iters >= criteria.max_iters:
            break
        rhs = convert_vector(res.vector / res.norm, Precision.FP32)
        zero = np.zeros_like(rhs)
        try:
            cycle = gmres_cycle(
                op,
                rhs,
                zero,
                criteria,
                max_steps=criteria.max_iters - iters,
                r0=rhs,
                M_op=M_op,
                bnorm=bnorm / res.norm,
                timer=timer,
            )
        except DivergenceError:
            log.error("Inner fp32 solve diverged after %d iterations", iters)
            raise
        for k, implicit in enumerate(cycle.implicit_history, start=1):
            history.append(HistoryEntry(iters + k, implicit, None, phase))
        iters += cycle.steps
        x = x + res.norm * convert_vector(cycle.x, Precision.FP64)
        res = explicit_residual(A, b, x)
        relres = res.norm / bnorm
        if not np.isfinite(relres):
            log.error("fp64 residual is not finite after %d iterations", iters)
            raise DivergenceError(f"Explicit residual is not finite at {iters}")
        history[-1].explicit_relres = relres
        restarts.append(relres)
        if not report.stalled and _is_stalled(restarts):
            report.stalled = True
            log.warning("GMRES-IR stalled at relres %.3g", relres)

    report.iters_fp32 = iters
    return _finish(report, timer, x)


def gmres_fd(
    A: CsrMatrix,
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    criteria: StopCriteria = StopCriteria(),
    switch_iter: int = 0,
    precond32: Optional[Preconditioner] = None,
    precond64: Optional[Preconditioner] = None,
    switch_on_stall: bool = False,
    timer: Optional[KernelTimer] = None,
) -> SolveReport:
    """GMRES-FD: fp32 GMRES(m) for `switch_iter` iterations, then fp64.

    The fp32 solution is the starting vector of the fp64 phase. With
    ``switch_iter=0`` this is exactly `gmres_restarted` in fp64. The fp32
    phase also ends early when it converges, when its implicit residual
    claims a convergence its explicit residual doesn't confirm, or when it
    stalls and `switch_on_stall` is set.

    Raises:
        ConfigError: `switch_iter` is not a nonnegative multiple of ``m``.
    """
    log.debug(
        "Called with n=%d, criteria=%s, switch_iter=%d, switch_on_stall=%s",
        A.n_rows,
        criteria,
        switch_iter,
        switch_on_stall,
    )
    if switch_iter < 0 or switch_iter % criteria.m:
        raise ConfigError(
            f"switch_iter={switch_iter} is not a multiple of m={criteria.m}"
        )
    if switch_iter == 0:
        return gmres_restarted(A, b, x0, criteria, precond64, Precision.FP64, timer)

    x0 = _initial_guess(b, x0)
    A64 = convert_matrix(A, Precision.FP64)
    A32 = convert_matrix(A, Precision.FP32)
    b64 = convert_vector(b, Precision.FP64)
    b32 = convert_vector(b, Precision.FP32)
    x32 = convert_vector(x0, Precision.FP32)
    timer = timer if timer is not None else KernelTimer()
    M32 = precond_operator(precond32, A32, timer) if precond32 is not None else None
    M64 = precond_operator(precond64, A64, timer) if precond64 is not None else None
    report = SolveReport(x0)

    timer.start()
    x32 = _restart_loop(
        A32,
        b32,
        x32,
        criteria.replace(restart_on_loss=False),
        report,
        timer,
        M_op=M32,
        max_iters=min(switch_iter, criteria.max_iters),
        stop_on_stall=switch_on_stall,
    )
    if report.loss_of_accuracy:
        log.info("fp32 phase lost accuracy, switching early")
    report.loss_of_accuracy = report.converged = False
    log.info("Switching to fp64 after %d iterations", report.iters_fp32)

    x = _restart_loop(
        A64,
        b64,
        convert_vector(x32, Precision.FP64),
        criteria,
        report,
        timer,
        M_op=M64,
        start_iter=report.iters_fp32,
        max_iters=criteria.max_iters - report.iters_fp32,
    )
    return _finish(report, timer, x)
