#!/usr/bin/env python3

"""Tests GMRES(m), GMRES-IR and GMRES-FD."""

import numpy as np
import pytest

from mpgmres import solvers
from mpgmres.core import CsrMatrix, convert_matrix
from mpgmres.gen import generate
from mpgmres.krylov import arnoldi_step
from mpgmres.precond import build_block_jacobi, build_poly_precond
from mpgmres.solvers import (
    explicit_residual,
    gmres_cycle,
    gmres_fd,
    gmres_ir,
    gmres_restarted,
)
from mpgmres.spmv import spmv
from mpgmres.types import Precision, StencilKind, StencilSpec, StopCriteria
from mpgmres.util import ConfigError, Kernel

from tests.conftest import random_matrix, tridiag


def _relres(A: CsrMatrix, b: np.ndarray, x: np.ndarray) -> float:
    return np.linalg.norm(b - A.to_dense() @ x) / np.linalg.norm(b)


def _krylov_minimum(D: np.ndarray, r0: np.ndarray, j: int) -> float:
    """``min ||r0 - D z||`` over the j-dimensional Krylov space of `r0`."""
    Q = (r0 / np.linalg.norm(r0))[:, None]
    for _ in range(j - 1):
        Q = np.linalg.qr(np.column_stack([Q, D @ Q[:, -1]]))[0]
    c = np.linalg.lstsq(D @ Q, r0, rcond=None)[0]
    return np.linalg.norm(r0 - D @ Q @ c)


# * Cycle


def test_cycle_identity():
    A = CsrMatrix.from_dense(np.eye(2))
    cycle = gmres_cycle(A, np.array([5.0, 6.0]), np.zeros(2))
    assert cycle.steps == 1
    assert cycle.implicit_converged
    assert cycle.x == pytest.approx([5.0, 6.0])


def test_cycle_two_by_two():
    A = CsrMatrix.from_dense(np.array([[4.0, 1.0], [1.0, 3.0]]))
    criteria = StopCriteria(rtol=1e-12, m=2)
    cycle = gmres_cycle(A, np.array([1.0, 2.0]), np.zeros(2), criteria)
    assert cycle.x == pytest.approx([1 / 11, 7 / 11], abs=1e-10)


def test_cycle_zero_residual_returns_immediately():
    A = CsrMatrix.from_dense(np.eye(3))
    x0 = np.array([1.0, 2.0, 3.0])
    cycle = gmres_cycle(A, x0.copy(), x0)
    assert cycle.steps == 0
    assert cycle.implicit_converged
    assert cycle.x is x0


def test_cycle_implicit_history_is_nonincreasing(laplace10: CsrMatrix):
    criteria = StopCriteria(rtol=1e-14, m=40)
    cycle = gmres_cycle(laplace10, np.ones(100), np.zeros(100), criteria)
    h = cycle.implicit_history
    assert len(h) == cycle.steps
    assert all(b <= a for a, b in zip(h, h[1:]))


@pytest.mark.parametrize("seed", range(20))
def test_cycle_is_optimal(seed: int):
    n = 40 + 8 * seed
    A = random_matrix(n, seed)
    D = A.to_dense()
    b = np.random.default_rng(100 + seed).standard_normal(n)
    for j in (1, 5, 15, 30):
        cycle = gmres_cycle(A, b, np.zeros(n), StopCriteria(rtol=1e-15, m=j))
        assert cycle.steps == j
        achieved = np.linalg.norm(b - D @ cycle.x)
        assert achieved == pytest.approx(_krylov_minimum(D, b, j), rel=1e-8)


# * Restarted


def test_restarted_identity():
    A = CsrMatrix.from_dense(np.eye(8))
    b = np.random.default_rng(0).standard_normal(8)
    report = gmres_restarted(A, b)
    assert report.converged
    assert report.total_iters == report.iters_fp64 == 1
    assert report.x == pytest.approx(b)
    assert [e.iteration for e in report.residual_history] == [0, 1]
    assert report.residual_history[0].explicit_relres == 1.0


def test_restarted_fp64_converges(laplace30: CsrMatrix):
    b = np.ones(laplace30.n_rows)
    report = gmres_restarted(laplace30, b, criteria=StopCriteria(m=50))
    assert report.converged
    assert not report.loss_of_accuracy
    assert report.iters_fp32 == 0
    assert report.final_relres <= 1e-10
    assert _relres(laplace30, b, report.x) <= 1e-10
    assert report.x.dtype == np.float64


def test_restarted_laplace50_iteration_count():
    A = generate(StencilSpec(StencilKind.Laplace2D, 50))
    b = np.ones(A.n_rows)
    report = gmres_restarted(A, b, criteria=StopCriteria(m=50, rtol=1e-10))
    assert report.converged
    assert report.total_iters == 235
    assert _relres(A, b, report.x) <= 1e-9


def test_restarted_is_deterministic(laplace10: CsrMatrix):
    b = np.random.default_rng(3).uniform(size=100)
    first = gmres_restarted(laplace10, b, criteria=StopCriteria(m=10))
    second = gmres_restarted(laplace10, b, criteria=StopCriteria(m=10))
    assert first.residual_history == second.residual_history
    assert np.array_equal(first.x, second.x)


def test_restarted_explicit_tracks_implicit(laplace30: CsrMatrix):
    report = gmres_restarted(
        laplace30, np.ones(900), criteria=StopCriteria(m=30)
    )
    for entry in report.explicit_history[1:]:
        assert entry.explicit_relres == pytest.approx(
            entry.implicit_relres, rel=1e-3, abs=1e-12
        )


def test_restarted_fp32_plateaus():
    A = generate(StencilSpec(StencilKind.Laplace2D, 100))
    b = np.ones(A.n_rows)
    double = gmres_restarted(A, b, criteria=StopCriteria(m=50))
    assert double.converged
    criteria = StopCriteria(m=50, max_iters=2 * double.total_iters)
    single = gmres_restarted(A, b, criteria=criteria, precision=Precision.FP32)
    assert not single.converged
    assert single.iters_fp32 > 0 and single.iters_fp64 == 0
    assert 1e-8 <= single.best_explicit_relres <= 1e-4
    assert all(e.phase is Precision.FP32 for e in single.residual_history)
    assert single.x.dtype == np.float64


def test_restarted_max_iters_gives_unconverged_report(laplace10: CsrMatrix):
    report = gmres_restarted(
        laplace10, np.ones(100), criteria=StopCriteria(m=50, max_iters=5)
    )
    assert not report.converged
    assert report.total_iters == 5
    assert len(report.residual_history) == 6
    assert report.residual_history[-1].explicit_relres is not None


def test_restarted_zero_rhs(laplace10: CsrMatrix):
    report = gmres_restarted(laplace10, np.zeros(100))
    assert report.converged
    assert report.total_iters == 0
    assert not report.x.any()


def test_restarted_exact_initial_guess(laplace10: CsrMatrix):
    x = np.ones(100)
    report = gmres_restarted(laplace10, spmv(laplace10, x), x0=x)
    assert report.converged
    assert report.total_iters == 0


def test_kernel_times_partition_solve_time(laplace30: CsrMatrix):
    report = gmres_restarted(laplace30, np.ones(900), criteria=StopCriteria(m=20))
    assert set(report.kernel_times) == set(Kernel)
    assert sum(report.kernel_times.values()) == pytest.approx(report.solve_time)
    assert report.kernel_times[Kernel.SpMV] > 0


def _perturbed_arnoldi_step(ws, apply_op):
    j = ws.j
    step = arnoldi_step(ws, apply_op)
    ws.H.H[: j + 1, j] *= 1 + 1e-3
    return step


def test_loss_of_accuracy_is_detected(monkeypatch: pytest.MonkeyPatch):
    A = CsrMatrix.from_dense(np.diag(np.arange(1.0, 21.0)))
    b = np.ones(20)
    clean = gmres_restarted(A, b, criteria=StopCriteria(m=30))
    assert clean.converged and not clean.loss_of_accuracy

    monkeypatch.setattr(solvers, "arnoldi_step", _perturbed_arnoldi_step)
    report = gmres_restarted(A, b, criteria=StopCriteria(m=30))
    assert report.loss_of_accuracy
    assert not report.converged
    last = report.residual_history[-1]
    assert last.explicit_relres > 10 * 1e-10
    assert last.implicit_relres <= 1e-10


def test_restart_on_loss_keeps_going(monkeypatch: pytest.MonkeyPatch):
    A = CsrMatrix.from_dense(np.diag(np.arange(1.0, 21.0)))
    monkeypatch.setattr(solvers, "arnoldi_step", _perturbed_arnoldi_step)
    criteria = StopCriteria(m=30, max_iters=200, restart_on_loss=True)
    report = gmres_restarted(A, np.ones(20), criteria=criteria)
    assert report.loss_of_accuracy
    assert report.total_iters > 20


def test_is_stalled():
    assert not solvers._is_stalled([1.0, 0.5])
    assert not solvers._is_stalled([1.0, 0.995, 0.5])
    assert solvers._is_stalled([1.0, 0.995, 0.994])


# * Preconditioned


@pytest.mark.parametrize("k", [1, 2, 10])
def test_block_jacobi_residual_identity(k: int):
    A = tridiag(10)
    b = np.ones(10)
    report = gmres_restarted(A, b, precond=build_block_jacobi(A, k))
    assert report.converged
    assert _relres(A, b, report.x) <= 10 * 1e-10
    if k == 10:
        assert report.total_iters == 1


@pytest.mark.parametrize("d", [5, 10])
def test_poly_residual_identity(laplace30: CsrMatrix, d: int):
    b = np.ones(900)
    report = gmres_restarted(laplace30, b, precond=build_poly_precond(laplace30, d))
    assert report.converged
    assert _relres(laplace30, b, report.x) <= 10 * 1e-10


def test_poly_exact_for_distinct_eigenvalues():
    A = CsrMatrix.from_dense(np.diag([1.0, 2.0, 3.0, 4.0]))
    b = np.array([1.0, -2.0, 0.5, 3.0])
    report = gmres_restarted(A, b, precond=build_poly_precond(A, 3))
    assert report.converged
    assert report.total_iters == 1
    assert _relres(A, b, report.x) <= 1e-12


def test_fp32_precond_in_fp64_solve(laplace30: CsrMatrix):
    M = build_poly_precond(laplace30, 5, precision=Precision.FP32)
    b = np.ones(900)
    report = gmres_restarted(
        laplace30, b, criteria=StopCriteria(rtol=1e-6), precond=M
    )
    assert report.converged
    assert report.iters_fp64 > 0
    assert _relres(laplace30, b, report.x) <= 1e-6


# * Explicit residual


def test_explicit_residual():
    A = CsrMatrix.from_dense(np.eye(3))
    b = np.array([1.0, 2.0, 3.0])
    assert explicit_residual(A, b, b).norm == 0.0
    assert explicit_residual(A, np.zeros(3), np.zeros(3)).norm == 0.0
    R = random_matrix(10, 5)
    x, b = np.random.default_rng(6).standard_normal((2, 10))
    res = explicit_residual(R, b, x)
    oracle = b - R.to_dense() @ x
    assert res.vector == pytest.approx(oracle, abs=100 * 2.0**-53 * 10)
    assert res.norm == pytest.approx(np.linalg.norm(oracle))


# * GMRES-IR


def test_ir_identity():
    A = CsrMatrix.from_dense(np.eye(16))
    report = gmres_ir(A, np.ones(16))
    assert report.converged
    assert report.iters_fp32 == 1
    assert report.iters_fp64 == 0
    assert report.x.tolist() == [1.0] * 16


@pytest.mark.parametrize(
    "spec",
    [StencilSpec(StencilKind.Laplace2D, 20), StencilSpec(StencilKind.ConvDiff2D, 20)],
    ids=str,
)
def test_ir_reaches_double_accuracy(spec: StencilSpec):
    A = generate(spec)
    b = np.ones(A.n_rows)
    criteria = StopCriteria(m=20)
    double = gmres_restarted(A, b, criteria=criteria)
    ir = gmres_ir(A, b, criteria=criteria)
    assert double.converged and ir.converged
    assert ir.total_iters <= double.total_iters + 2 * criteria.m
    assert ir.iters_fp32 == ir.total_iters
    assert _relres(A, b, ir.x) <= 1e-10
    assert all(e.phase is Precision.FP32 for e in ir.residual_history)

    double_at = {e.iteration: e.explicit_relres for e in double.explicit_history}
    for e in ir.explicit_history:
        if e.iteration <= 5 * criteria.m and e.iteration in double_at:
            assert 0.1 <= e.explicit_relres / double_at[e.iteration] <= 10


def test_ir_is_deterministic(laplace10: CsrMatrix):
    first = gmres_ir(laplace10, np.ones(100), criteria=StopCriteria(m=10))
    second = gmres_ir(laplace10, np.ones(100), criteria=StopCriteria(m=10))
    assert first.iters_fp32 == second.iters_fp32
    assert np.array_equal(first.x, second.x)


def test_ir_rejects_fp32_input(laplace10: CsrMatrix):
    with pytest.raises(ConfigError):
        gmres_ir(convert_matrix(laplace10, Precision.FP32), np.ones(100))


# * GMRES-FD


def test_fd_switch_zero_is_fp64(laplace30: CsrMatrix):
    b = np.ones(900)
    criteria = StopCriteria(m=30)
    baseline = gmres_restarted(laplace30, b, criteria=criteria)
    fd = gmres_fd(laplace30, b, criteria=criteria, switch_iter=0)
    assert fd.residual_history == baseline.residual_history
    assert np.array_equal(fd.x, baseline.x)
    assert fd.iters_fp32 == 0
    assert fd.total_iters == baseline.total_iters


def test_fd_switches_once():
    A = generate(StencilSpec(StencilKind.Laplace2D, 20))
    b = np.ones(A.n_rows)
    criteria = StopCriteria(m=20)
    baseline = gmres_restarted(A, b, criteria=criteria)
    fd = gmres_fd(A, b, criteria=criteria, switch_iter=40)
    assert fd.converged
    assert fd.iters_fp32 == 40
    assert fd.total_iters == fd.iters_fp32 + fd.iters_fp64
    assert fd.total_iters >= baseline.total_iters - criteria.m
    assert _relres(A, b, fd.x) <= 1e-10

    phases = [e.phase for e in fd.residual_history]
    flips = [i for i in range(1, len(phases)) if phases[i] != phases[i - 1]]
    assert len(flips) == 1
    first64 = fd.residual_history[flips[0]]
    assert first64.iteration == 40
    assert first64.phase is Precision.FP64


def test_fd_rejects_bad_switch(laplace10: CsrMatrix):
    with pytest.raises(ConfigError, match="not a multiple of m=50"):
        gmres_fd(laplace10, np.ones(100), switch_iter=75)
