#!/usr/bin/env python3

"""
mpgmres.krylov
~~~~~~~~~~~~~~

One Arnoldi step with two passes of classical Gram-Schmidt (CGS2), and the
Givens rotation machinery that solves the Hessenberg least-squares problem
incrementally.
"""

from __future__ import annotations

import logging
from typing import Callable, NamedTuple, Optional

import numpy as np

from mpgmres.core import HessenbergLS, MultiVector, gemv, norm2, trsv_upper
from mpgmres.types import Precision
from mpgmres.util import (
    DivergenceError,
    Kernel,
    KernelTimer,
    ShapeError,
    SingularHessenbergError,
)

log = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]


class ArnoldiStep(NamedTuple):
    h_col: np.ndarray
    """The ``j + 1`` projection coefficients, both CGS passes summed."""

    h_subdiag: float
    breakdown: bool


class ArnoldiWorkspace:
    """Single-owner state of one GMRES cycle: the basis ``V`` and ``H``.

    Call `start` with the cycle's initial residual, then `arnoldi_step` up to
    `m` times.

    Args:
        n: Length of the vectors.
        m: Maximum number of steps, ``V`` holds ``m + 1`` columns.
        breakdown_tol: Relative threshold on ``h[j+1, j]``, defaults to ``10u``.
        timer: Kernel calls are timed into it when given.
    """

    def __init__(
        self,
        n: int,
        m: int,
        precision: Precision,
        breakdown_tol: Optional[float] = None,
        timer: Optional[KernelTimer] = None,
    ) -> None:
        self.precision = precision
        self.V = MultiVector(n, m + 1, precision)
        self.H = HessenbergLS(m, 0.0, precision)
        self.j = 0
        if breakdown_tol is None:
            breakdown_tol = 10 * precision.unit_roundoff
        self.breakdown_tol = breakdown_tol
        self.timer = timer if timer is not None else KernelTimer()

    @property
    def m(self) -> int:
        return self.H.m

    @property
    def n(self) -> int:
        return self.V.n

    def start(self, r0: np.ndarray) -> float:
        """Makes ``r0 / ||r0||`` the first basis vector, returns ``||r0||``.

        ``r0`` must be nonzero.
        """
        with self.timer.time(Kernel.Norm):
            gamma = norm2(r0)
        if not np.isfinite(gamma):
            raise DivergenceError("Initial residual is not finite")
        self.V = MultiVector(self.n, self.m + 1, self.precision)
        self.V.append(r0 / gamma)
        self.H = HessenbergLS(self.m, gamma, self.precision)
        self.j = 0
        return gamma


def arnoldi_step(ws: ArnoldiWorkspace, apply_op: Operator) -> ArnoldiStep:
    """Extends the basis by one vector using CGS2.

    Fills column ``j`` of ``ws.H.H``. On breakdown the new vector isn't
    appended, the Krylov space is invariant and the cycle has to end.

    Raises:
        ShapeError: The operator returned a vector of the wrong length.
        DivergenceError: Non-finite values showed up.
    """
    j = ws.j
    if j >= ws.m:
        raise IndexError(f"Workspace is full after {ws.m} steps")
    timer = ws.timer
    w = apply_op(ws.V[j])
    if w.shape != (ws.n,):
        raise ShapeError(f"Operator returned shape {w.shape}, expected ({ws.n},)")
    if not np.all(np.isfinite(w)):
        raise DivergenceError(f"Operator output at step {j} is not finite")
    with timer.time(Kernel.Norm):
        w_norm = norm2(w)
    V = ws.V.active
    h = np.zeros(j + 1, dtype=ws.precision.dtype)
    for _ in range(2):
        with timer.time(Kernel.GemvTrans):
            c = gemv(V, w, transpose=True)
        with timer.time(Kernel.GemvNoTrans):
            w = gemv(V, c, alpha=-1.0, beta=1.0, y=w)
        h += c
    with timer.time(Kernel.Norm):
        h_next = norm2(w)
    if not np.isfinite(h_next):
        raise DivergenceError(f"Orthogonalised vector at step {j} is not finite")
    ws.H.H[: j + 1, j] = h
    ws.H.H[j + 1, j] = h_next
    breakdown = bool(h_next <= ws.breakdown_tol * w_norm)
    if breakdown:
        log.debug("Breakdown at step %d, h=%g, |w|=%g", j, h_next, w_norm)
    else:
        ws.V.append(w / h_next)
    ws.j = j + 1
    return ArnoldiStep(h, float(h_next), breakdown)


def givens_update(H: HessenbergLS, j: int) -> float:
    """Rotates column ``j`` into `H.R` and returns the implicit residual norm.

    Applies the ``j`` stored rotations, then computes the one annihilating
    ``h[j+1, j]`` and rotates `H.rhs` with it. The returned ``|rhs[j+1]|`` never
    increases with ``j``.
    """
    dt = H.precision.dtype
    col = H.H[: j + 2, j].copy()
    for i in range(j):
        c, s = H.givens_cos[i], H.givens_sin[i]
        col[i], col[i + 1] = c * col[i] + s * col[i + 1], c * col[i + 1] - s * col[i]
    a, b = col[j], col[j + 1]
    if b == 0:
        c, s = dt.type(1.0), dt.type(0.0)
    else:
        r = np.hypot(a, b)
        c, s = a / r, b / r
        col[j] = r
    col[j + 1] = 0
    H.givens_cos[j], H.givens_sin[j] = c, s
    H.R[: j + 2, j] = col
    H.rhs[j + 1] = -s * H.rhs[j]
    H.rhs[j] = c * H.rhs[j]
    H.implicit_resnorm = abs(H.rhs[j + 1])
    return float(H.implicit_resnorm)


def solve_least_squares(H: HessenbergLS, j: int) -> np.ndarray:
    """Back substitution on the ``j x j`` rotated triangle.

    Raises:
        SingularHessenbergError: A diagonal entry of the triangle is zero.
    """
    R = H.R[:j, :j]
    zero = np.flatnonzero(np.diag(R) == 0)
    if zero.size:
        raise SingularHessenbergError(f"Zero on the diagonal at {int(zero[0])}")
    return trsv_upper(R, H.rhs[:j])
