#!/usr/bin/env python3

"""
mpgmres.precond
~~~~~~~~~~~~~~~

Right preconditioners and the reordering applied before block Jacobi.

Contains:
- `PolynomialPreconditioner`: The GMRES polynomial ``p(A) ~ A^-1``.
- `BlockJacobiPreconditioner`: LU factors of the dense diagonal blocks.
- `cast_apply`: Applies a preconditioner stored in another precision.
- `rcm_reorder`: Reverse Cuthill-McKee on the pattern of ``A + A^T``.
"""

from __future__ import annotations

import collections
import dataclasses
import enum
import functools
import logging
import warnings
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph

from mpgmres.core import CsrMatrix, convert_matrix, convert_vector
from mpgmres.krylov import (
    ArnoldiWorkspace,
    arnoldi_step,
    givens_update,
    solve_least_squares,
)
from mpgmres.spmv import spmv
from mpgmres.types import Precision
from mpgmres.util import (
    ConfigError,
    DivergenceError,
    Kernel,
    KernelTimer,
    PrecisionError,
    ShapeError,
    SingularBlockError,
    SingularHessenbergError,
    rng,
)

log = logging.getLogger(__name__)

POWER_MAX_DEGREE = 10
"""Polynomials of higher degree are stored as Newton roots."""


class PolynomialBasis(enum.Enum):
    """How a `PolynomialPreconditioner` stores its polynomial."""

    Power = "power"
    """Coefficients ``c_0 .. c_d`` of ``sum c_k t^k``, applied with Horner."""

    NewtonRoots = "newton"
    """The ``d + 1`` harmonic Ritz values, roots of the residual polynomial
    ``1 - t p(t)``, in modified Leja order."""


@dataclasses.dataclass(frozen=True, eq=False)
class PolynomialPreconditioner:
    """A polynomial in ``A`` applied as a right preconditioner.

    Build one with `build_poly_precond`, or directly from known coefficients
    or roots.
    """

    basis: PolynomialBasis
    precision: Precision = Precision.FP64
    coefficients: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(0)
    )
    roots: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(0, dtype=complex)
    )

    def __post_init__(self):
        values = self.coefficients if self.is_power else self.roots
        if values.size == 0:
            raise ConfigError(f"A {self.basis.value} polynomial needs values")
        if not np.all(np.isfinite(values)):
            raise DivergenceError("Polynomial coefficients are not finite")
        if self.is_power:
            coefficients = np.asarray(self.coefficients, dtype=self.precision.dtype)
            object.__setattr__(self, "coefficients", coefficients)
        else:
            object.__setattr__(self, "roots", np.asarray(self.roots, dtype=complex))

    @property
    def is_power(self) -> bool:
        return self.basis is PolynomialBasis.Power

    @property
    def degree(self) -> int:
        """Degree of ``p``, also the number of SpMVs one apply costs."""
        if self.is_power:
            return len(self.coefficients) - 1
        return len(self.roots) - 1

    def __call__(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Evaluates ``p`` at scalar points, mainly for inspection."""
        t = np.asarray(t, dtype=float)
        if self.is_power:
            return np.polynomial.polynomial.polyval(t, self.coefficients)
        residual = np.ones_like(t, dtype=complex)
        for theta in self.roots:
            residual = residual * (1 - t / theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.real((1 - residual) / t)


@dataclasses.dataclass(frozen=True, eq=False)
class BlockJacobiPreconditioner:
    """Factored ``k x k`` diagonal blocks, the last one padded with identity.

    Block ``i`` satisfies ``A_i[perm[i]] = L_i U_i`` with the unit lower
    triangle ``L_i`` and ``U_i`` packed together in ``lu[i]``.
    """

    block_size: int
    n: int
    lu: np.ndarray
    perm: np.ndarray

    @property
    def n_blocks(self) -> int:
        return self.lu.shape[0]

    @property
    def precision(self) -> Precision:
        return Precision.of(self.lu)


Preconditioner = Union[PolynomialPreconditioner, BlockJacobiPreconditioner]


@dataclasses.dataclass(frozen=True, eq=False)
class Permutation:
    """Row ``i`` of the permuted matrix is row ``perm[i]`` of the original."""

    perm: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        n = len(perm)
        if not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("Not a permutation of 0..n-1")
        object.__setattr__(self, "perm", perm)

    def __len__(self) -> int:
        return len(self.perm)

    @functools.cached_property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Moves a vector into the permuted numbering."""
        return x[self.perm]

    def unapply(self, y: np.ndarray) -> np.ndarray:
        """Moves a vector back into the original numbering."""
        return y[self.inverse]

    def permute_matrix(self, A: CsrMatrix) -> CsrMatrix:
        """``P A P^T`` in canonical form."""
        return CsrMatrix.from_scipy(A.scipy[self.perm, :][:, self.perm])


# * Polynomial


def _check_precision(M: Preconditioner, *arrays: np.ndarray) -> None:
    for a in arrays:
        if Precision.of(a) is not M.precision:
            raise PrecisionError(
                f"Preconditioner is {M.precision.value}, operand is "
                f"{Precision.of(a).value}, use cast_apply"
            )


def _krylov_matrix_factor(H: np.ndarray, k: int) -> np.ndarray:
    """``R`` with ``[v, Av, .., A^(k-1) v] = V_k R`` from the Arnoldi ``H``."""
    R = np.zeros((k, k), dtype=H.dtype)
    R[0, 0] = 1
    for i in range(k - 1):
        R[: i + 2, i + 1] = H[: i + 2, : i + 1] @ R[: i + 1, i]
    return R


def _harmonic_ritz_values(H: np.ndarray, k: int) -> np.ndarray:
    """Eigenvalues of ``H_k + h^2 H_k^-H e_k e_k^T``."""
    Hk = H[:k, :k].astype(np.float64)
    h = float(H[k, k - 1]) if k < H.shape[0] else 0.0
    if h != 0.0:
        e_k = np.zeros(k)
        e_k[-1] = 1.0
        try:
            f = scipy.linalg.solve(Hk.T, e_k)
        except np.linalg.LinAlgError as exc:
            raise SingularHessenbergError("Hessenberg is singular") from exc
        Hk[:, -1] += h**2 * f
    return scipy.linalg.eigvals(Hk)


def leja_order(theta: np.ndarray) -> np.ndarray:
    """Modified Leja ordering, conjugate pairs stay adjacent (positive first).

    Starts at the largest modulus, then repeatedly takes the value maximising
    the product of distances to those already taken. Ties go to the lowest
    index.
    """
    theta = np.asarray(theta, dtype=complex)
    left = np.ones(len(theta), dtype=bool)
    ordered = []

    def take(i: int) -> None:
        if theta[i].imag < 0:
            i = _find_unused(theta, left, np.conj(theta[i]))
        left[i] = False
        ordered.append(theta[i])
        if theta[i].imag != 0:
            j = _find_unused(theta, left, np.conj(theta[i]))
            left[j] = False
            ordered.append(theta[j])

    take(int(np.argmax(np.abs(theta))))
    with np.errstate(divide="ignore"):
        while left.any():
            candidates = np.flatnonzero(left)
            dist = np.abs(theta[candidates, None] - np.array(ordered)[None, :])
            score = np.log(dist).sum(axis=1)
            take(int(candidates[np.argmax(score)]))
    return np.array(ordered)


def _find_unused(theta: np.ndarray, left: np.ndarray, value: complex) -> int:
    matches = np.flatnonzero(left & (theta == value))
    if not matches.size:
        raise ValueError(f"{value} has no conjugate partner")
    return int(matches[0])


def build_poly_precond(
    A: CsrMatrix, d: int, seed: int = 0, precision: Optional[Precision] = None
) -> PolynomialPreconditioner:
    """The degree `d` GMRES polynomial of `A` from a seeded random start vector.

    Runs ``d + 1`` Arnoldi steps in `precision` (that of `A` by default), so
    that ``1 - t p(t)`` is the residual polynomial of those steps. Degrees up
    to 10 are stored as power coefficients, higher ones as Leja ordered
    harmonic Ritz values.

    A breakdown before ``d + 1`` steps gives a polynomial of lower degree and
    logs a warning; it is exact for the start vector.

    Raises:
        DivergenceError: The coefficients came out non-finite.
    """
    log.debug(
        "Called with n=%d, d=%d, seed=%d, precision=%s", A.n_rows, d, seed, precision
    )
    if d < 0:
        raise ConfigError(f"Polynomial degree must be nonnegative, got {d}")
    if A.n_rows != A.n_cols:
        raise ShapeError(f"A is {A.n_rows}x{A.n_cols}, not square")
    precision = precision or A.precision
    A = convert_matrix(A, precision)
    v = convert_vector(rng(seed).standard_normal(A.n_rows), precision)
    steps = d + 1
    ws = ArnoldiWorkspace(A.n_rows, steps, precision)
    gamma = ws.start(v)

    def apply_op(x: np.ndarray) -> np.ndarray:
        return spmv(A, x)

    for j in range(steps):
        breakdown = arnoldi_step(ws, apply_op).breakdown
        givens_update(ws.H, j)
        if breakdown:
            break
    k = ws.j
    if k < steps:
        log.warning(
            "Arnoldi broke down, polynomial degree reduced from %d to %d", d, k - 1
        )

    if k - 1 <= POWER_MAX_DEGREE:
        y = solve_least_squares(ws.H, k) / gamma
        R = _krylov_matrix_factor(ws.H.H, k)
        c = scipy.linalg.solve_triangular(R, y, lower=False, check_finite=False)
        M = PolynomialPreconditioner(PolynomialBasis.Power, precision, coefficients=c)
    else:
        roots = leja_order(_harmonic_ritz_values(ws.H.H, k))
        M = PolynomialPreconditioner(
            PolynomialBasis.NewtonRoots, precision, roots=roots
        )
    log.info("Built %s polynomial of degree %d", M.basis.value, M.degree)
    return M


def apply_poly(
    M: PolynomialPreconditioner,
    A: CsrMatrix,
    x: np.ndarray,
    timer: Optional[KernelTimer] = None,
) -> np.ndarray:
    """Returns ``p(A) x`` using exactly ``M.degree`` SpMVs.

    Raises:
        PrecisionError: `A` or `x` isn't in the precision of `M`.
    """
    _check_precision(M, A.values, x)
    timer = timer if timer is not None else KernelTimer()

    def matvec(v: np.ndarray) -> np.ndarray:
        with timer.time(Kernel.SpMV):
            return spmv(A, v)

    scalar = M.precision.dtype.type
    if M.is_power:
        c = M.coefficients
        y = c[-1] * x
        for ck in c[-2::-1]:
            y = matvec(y) + ck * x
        return y

    # Newton form: p(A) x = sum_i (prod_{l<i} (I - A/theta_l)) x / theta_i, with
    # conjugate pairs merged into one real quadratic factor.
    roots = M.roots
    y = np.zeros_like(x)
    prod = x
    i = 0
    while i < len(roots):
        theta = roots[i]
        if theta.imag == 0:
            inv = scalar(1.0 / theta.real)
            y = y + inv * prod
            if i < len(roots) - 1:
                prod = prod - inv * matvec(prod)
            i += 1
        else:
            mod = abs(theta) ** 2
            two_a = scalar(2.0 * theta.real / mod)
            inv_mod = scalar(1.0 / mod)
            tmp = matvec(prod)
            y = y + two_a * prod - inv_mod * tmp
            if i < len(roots) - 2:
                prod = prod - two_a * tmp + inv_mod * matvec(tmp)
            i += 2
    return y


# * Block Jacobi


def build_block_jacobi(
    A: CsrMatrix, k: int, precision: Optional[Precision] = None
) -> BlockJacobiPreconditioner:
    """LU factors, with partial pivoting, of the ``k x k`` diagonal blocks of `A`.

    Entries outside the blocks are ignored, the blocks are contiguous index
    ranges. Factors are computed in `precision`, that of `A` by default.

    Raises:
        SingularBlockError: A block has a zero pivot.
    """
    log.debug("Called with n=%d, k=%d, precision=%s", A.n_rows, k, precision)
    if k < 1:
        raise ConfigError(f"Block size must be positive, got {k}")
    if A.n_rows != A.n_cols:
        raise ShapeError(f"A is {A.n_rows}x{A.n_cols}, not square")
    precision = precision or A.precision
    A = convert_matrix(A, precision)
    n = A.n_rows
    k = min(k, n)
    n_blocks = -(-n // k)

    rows = np.repeat(np.arange(n), A.row_lengths())
    cols = A.col_idx.astype(np.int64)
    inside = rows // k == cols // k
    rows, cols = rows[inside], cols[inside]
    blocks = np.zeros((n_blocks, k, k), dtype=precision.dtype)
    blocks[rows // k, rows % k, cols % k] = A.values[inside]
    pad = np.arange(n, n_blocks * k) % k
    blocks[-1, pad, pad] = 1

    lu = np.empty_like(blocks)
    perm = np.empty((n_blocks, k), dtype=np.int64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        for b in range(n_blocks):
            lu[b], piv = scipy.linalg.lu_factor(blocks[b], check_finite=False)
            if np.any(np.diag(lu[b]) == 0):
                raise SingularBlockError(b)
            p = np.arange(k)
            for i, pi in enumerate(piv):
                p[i], p[pi] = p[pi], p[i]
            perm[b] = p
    if not np.all(np.isfinite(lu)):
        raise DivergenceError("Block factors are not finite")
    log.info("Factored %d blocks of size %d", n_blocks, k)
    return BlockJacobiPreconditioner(k, n, lu, perm)


def apply_block_jacobi(M: BlockJacobiPreconditioner, x: np.ndarray) -> np.ndarray:
    """Solves with every diagonal block at once, block-batched substitutions."""
    _check_precision(M, x)
    if x.shape != (M.n,):
        raise ShapeError(f"x has shape {x.shape}, expected ({M.n},)")
    k, lu = M.block_size, M.lu
    z = np.zeros(M.n_blocks * k, dtype=x.dtype)
    z[: M.n] = x
    z = np.take_along_axis(z.reshape(M.n_blocks, k), M.perm, axis=1)
    for i in range(1, k):
        z[:, i] -= np.einsum("bj,bj->b", lu[:, i, :i], z[:, :i])
    for i in range(k - 1, -1, -1):
        z[:, i] -= np.einsum("bj,bj->b", lu[:, i, i + 1 :], z[:, i + 1 :])
        z[:, i] /= lu[:, i, i]
    return z.reshape(-1)[: M.n]


# * Dispatch


def apply_precond(
    M: Preconditioner,
    A: Optional[CsrMatrix],
    x: np.ndarray,
    timer: Optional[KernelTimer] = None,
) -> np.ndarray:
    """Applies `M` natively, `A` is only needed by polynomials."""
    if isinstance(M, PolynomialPreconditioner):
        if A is None:
            raise ValueError("A polynomial preconditioner needs its matrix")
        return apply_poly(M, A, x, timer)
    return apply_block_jacobi(M, x)


def cast_apply(
    M: Preconditioner,
    A_m: Optional[CsrMatrix],
    x: np.ndarray,
    timer: Optional[KernelTimer] = None,
) -> np.ndarray:
    """Rounds `x` to the precision of `M`, applies it and casts the result back.

    `A_m` is the matrix in the precision of `M`.

    Raises:
        PrecisionOverflowError: `x` doesn't fit in the precision of `M`.
    """
    source = Precision.of(x)
    y = apply_precond(M, A_m, convert_vector(x, M.precision), timer)
    return convert_vector(y, source)


def precond_operator(
    M: Preconditioner, A: CsrMatrix, timer: Optional[KernelTimer] = None
) -> Callable[[np.ndarray], np.ndarray]:
    """An operator in the precision of `A` applying `M`.

    The copy of `A` a cast apply needs is made here, once.
    """
    if M.precision is A.precision:
        return functools.partial(apply_precond, M, A, timer=timer)
    log.debug("Applying %s preconditioner to %s vectors", M.precision, A.precision)
    A_m = None
    if isinstance(M, PolynomialPreconditioner):
        A_m = convert_matrix(A, M.precision)
    return functools.partial(cast_apply, M, A_m, timer=timer)


# * Reordering


def _symmetric_pattern(A: CsrMatrix) -> scipy.sparse.csr_matrix:
    """Adjacency of ``A + A^T`` without self loops, explicit zeros included."""
    P = scipy.sparse.csr_matrix(
        (np.ones(A.nnz, dtype=np.int8), A.col_idx, A.row_ptr), shape=A.shape
    )
    G = (P + P.T).tocsr()
    G = (scipy.sparse.triu(G, k=1) + scipy.sparse.tril(G, k=-1)).tocsr()
    G.sort_indices()
    return G


def _bfs_levels(G: scipy.sparse.csr_matrix, root: int) -> np.ndarray:
    return scipy.sparse.csgraph.shortest_path(
        G, method="D", unweighted=True, directed=False, indices=root
    )


def _pseudo_peripheral(
    G: scipy.sparse.csr_matrix, degree: np.ndarray, start: int
) -> int:
    """George-Liu search: hop to the lowest degree vertex of the farthest level
    as long as that increases the eccentricity."""
    root = start
    levels = _bfs_levels(G, root)
    ecc = levels[np.isfinite(levels)].max()
    while True:
        last = np.flatnonzero(levels == ecc)
        candidate = int(last[np.argmin(degree[last])])
        cand_levels = _bfs_levels(G, candidate)
        cand_ecc = cand_levels[np.isfinite(cand_levels)].max()
        if cand_ecc <= ecc:
            return root
        root, levels, ecc = candidate, cand_levels, cand_ecc


def rcm_reorder(A: CsrMatrix) -> Tuple[Permutation, CsrMatrix]:
    """Reverse Cuthill-McKee ordering of `A` and ``P A P^T``.

    Components are visited starting from their lowest numbered vertex, each
    BFS starts at a pseudo-peripheral vertex and enqueues children by
    ascending (degree, index).
    """
    log.debug("Called with n=%d, nnz=%d", A.n_rows, A.nnz)
    if A.n_rows != A.n_cols:
        raise ShapeError(f"A is {A.n_rows}x{A.n_cols}, not square")
    n = A.n_rows
    G = _symmetric_pattern(A)
    degree = np.diff(G.indptr)
    visited = np.zeros(n, dtype=bool)
    order = []
    for start in range(n):
        if visited[start]:
            continue
        root = _pseudo_peripheral(G, degree, start)
        visited[root] = True
        queue = collections.deque([root])
        while queue:
            v = queue.popleft()
            order.append(v)
            nbrs = G.indices[G.indptr[v] : G.indptr[v + 1]]
            nbrs = nbrs[~visited[nbrs]]
            nbrs = nbrs[np.lexsort((nbrs, degree[nbrs]))]
            visited[nbrs] = True
            queue.extend(int(u) for u in nbrs)
    P = Permutation(np.array(order[::-1]))
    A_p = P.permute_matrix(A)
    log.info("RCM bandwidth %d -> %d", bandwidth(A), bandwidth(A_p))
    return P, A_p


def bandwidth(A: CsrMatrix) -> int:
    """Largest ``|i - j|`` over stored entries."""
    if A.nnz == 0:
        return 0
    rows = np.repeat(np.arange(A.n_rows), A.row_lengths())
    return int(np.abs(rows - A.col_idx).max())
