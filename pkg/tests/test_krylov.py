#!/usr/bin/env python3

"""Tests CGS2 Arnoldi, the Givens updates and the least-squares solve."""

import numpy as np
import pytest

from mpgmres.core import CsrMatrix, HessenbergLS, convert_matrix, convert_vector
from mpgmres.krylov import (
    ArnoldiWorkspace,
    arnoldi_step,
    givens_update,
    solve_least_squares,
)
from mpgmres.spmv import spmv
from mpgmres.types import Precision
from mpgmres.util import (
    DivergenceError,
    Kernel,
    KernelTimer,
    ShapeError,
    SingularHessenbergError,
)

from tests.conftest import random_matrix


def _run(A: CsrMatrix, m: int, seed: int = 0) -> ArnoldiWorkspace:
    v = convert_vector(
        np.random.default_rng(seed).standard_normal(A.n_rows), A.precision
    )
    ws = ArnoldiWorkspace(A.n_rows, m, A.precision)
    ws.start(v)
    for j in range(m):
        assert not arnoldi_step(ws, lambda x: spmv(A, x)).breakdown
        givens_update(ws.H, j)
    return ws


def test_identity_breaks_down():
    ws = ArnoldiWorkspace(3, 2, Precision.FP64)
    ws.start(np.array([1.0, 0.0, 0.0]))
    step = arnoldi_step(ws, lambda x: x)
    assert step.breakdown
    assert step.h_col.tolist() == [1.0]
    assert step.h_subdiag == 0.0
    assert len(ws.V) == 1
    assert ws.j == 1


def test_permutation_step():
    ws = ArnoldiWorkspace(2, 2, Precision.FP64)
    ws.start(np.array([1.0, 0.0]))
    step = arnoldi_step(ws, lambda x: x[::-1].copy())
    assert not step.breakdown
    assert step.h_col.tolist() == [0.0]
    assert step.h_subdiag == 1.0
    assert ws.V[1].tolist() == [0.0, 1.0]


def test_start_returns_norm():
    ws = ArnoldiWorkspace(2, 1, Precision.FP64)
    assert ws.start(np.array([3.0, 4.0])) == 5.0
    assert ws.V[0].tolist() == [0.6, 0.8]


@pytest.mark.parametrize("precision", list(Precision))
@pytest.mark.parametrize("which", ["laplace", "random"])
def test_orthogonality_and_arnoldi_relation(
    laplace30: CsrMatrix, which: str, precision: Precision
):
    m = 50
    if which == "laplace":
        A = convert_matrix(laplace30, precision)
    else:
        A = convert_matrix(random_matrix(200, seed=11, shift=20.0), precision)
    ws = _run(A, m)
    u = precision.unit_roundoff
    V = ws.V.active.astype(np.float64)
    assert V.shape[1] == m + 1
    assert np.max(np.abs(V.T @ V - np.eye(m + 1))) <= 100 * u * m
    D = A.to_dense().astype(np.float64)
    H = ws.H.H.astype(np.float64)
    residual = np.linalg.norm(D @ V[:, :m] - V @ H)
    assert residual <= 100 * u * np.linalg.norm(D) * m


def test_step_times_kernels():
    timer = KernelTimer()
    ws = ArnoldiWorkspace(2, 2, Precision.FP64, timer=timer)
    ws.start(np.array([1.0, 0.0]))
    arnoldi_step(ws, lambda x: x[::-1].copy())
    assert timer.calls[Kernel.GemvTrans] == 2
    assert timer.calls[Kernel.GemvNoTrans] == 2
    assert timer.calls[Kernel.Norm] == 3


def test_step_errors():
    ws = ArnoldiWorkspace(2, 1, Precision.FP64)
    ws.start(np.array([1.0, 1.0]))
    with pytest.raises(ShapeError):
        arnoldi_step(ws, lambda x: np.ones(3))
    with pytest.raises(DivergenceError):
        arnoldi_step(ws, lambda x: np.array([np.nan, 1.0]))
    arnoldi_step(ws, lambda x: np.array([1.0, -1.0]))
    with pytest.raises(IndexError):
        arnoldi_step(ws, lambda x: x)


def test_givens_already_triangular():
    H = HessenbergLS(1, 6.0, Precision.FP64)
    H.H[:, 0] = [2.0, 0.0]
    assert givens_update(H, 0) == 0.0
    assert solve_least_squares(H, 1).tolist() == [3.0]


def test_givens_two_by_one():
    H = HessenbergLS(1, 1.0, Precision.FP64)
    H.H[:, 0] = [1.0, 1.0]
    assert givens_update(H, 0) == pytest.approx(1 / np.sqrt(2))
    assert H.givens_cos[0] == pytest.approx(1 / np.sqrt(2))
    assert H.givens_sin[0] == pytest.approx(1 / np.sqrt(2))
    assert solve_least_squares(H, 1) == pytest.approx([0.5])


def test_diagonal_solve():
    H = HessenbergLS(2, 4.0, Precision.FP64)
    H.H[0, 0] = 2.0
    H.H[1, 1] = 4.0
    givens_update(H, 0)
    givens_update(H, 1)
    assert solve_least_squares(H, 2).tolist() == [2.0, 0.0]


def test_least_squares_matches_qr():
    rng = np.random.default_rng(4)
    m = 10
    Hbar = np.triu(rng.standard_normal((m + 1, m)), k=-1)
    gamma = 2.5
    H = HessenbergLS(m, gamma, Precision.FP64)
    H.H[:] = Hbar
    residuals = [givens_update(H, j) for j in range(m)]
    assert all(b <= a * (1 + 1e-14) for a, b in zip(residuals, residuals[1:]))
    y = solve_least_squares(H, m)
    e1 = np.zeros(m + 1)
    e1[0] = gamma
    oracle = np.linalg.lstsq(Hbar, e1, rcond=None)[0]
    cond = np.linalg.cond(Hbar)
    assert np.max(np.abs(y - oracle)) <= 100 * 2.0**-53 * cond * np.abs(oracle).max()
    assert np.linalg.norm(e1 - Hbar @ y) == pytest.approx(residuals[-1], rel=1e-10)


def test_implicit_residual_matches_explicit(laplace30: CsrMatrix):
    A = laplace30
    b = np.ones(A.n_rows)
    ws = ArnoldiWorkspace(A.n_rows, 20, Precision.FP64)
    gamma = ws.start(b)
    for j in range(20):
        arnoldi_step(ws, lambda x: spmv(A, x))
        implicit = givens_update(ws.H, j)
    y = solve_least_squares(ws.H, 20)
    x = ws.V.active[:, :20] @ y
    explicit = np.linalg.norm(b - spmv(A, x))
    assert explicit == pytest.approx(implicit, abs=1e-10 * gamma)


def test_singular_triangle():
    H = HessenbergLS(1, 1.0, Precision.FP64)
    givens_update(H, 0)
    with pytest.raises(SingularHessenbergError):
        solve_least_squares(H, 1)
