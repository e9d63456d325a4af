#!/usr/bin/env python3

"""
mpgmres.core
~~~~~~~~~~~~

Precision-tagged storage and the dense kernels every solver is built from.

Vectors are plain 1-D numpy arrays, their dtype *is* their precision (see
`mpgmres.types.Precision.of`). Kernels never mix precisions; casting is always
an explicit `convert_vector` / `convert_matrix` call.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse

from mpgmres.types import Precision
from mpgmres.util import (
    CanonicalFormError,
    PrecisionError,
    PrecisionOverflowError,
    ShapeError,
)

log = logging.getLogger(__name__)

INDEX_LIMIT = 2**31
"""Indices are stored as 32-bit integers."""


def check_same_precision(*arrays: np.ndarray) -> Precision:
    precisions = {Precision.of(a) for a in arrays}
    if len(precisions) != 1:
        names = sorted(p.value for p in precisions)
        raise PrecisionError(f"Mixed precisions {names}, convert explicitly first")
    return precisions.pop()


@dataclasses.dataclass(frozen=True, eq=False)
class CsrMatrix:
    """A Compressed Sparse Row matrix.

    Treat the arrays as read-only: `convert_matrix` shares ``row_ptr`` and
    ``col_idx`` between the fp64 and fp32 copies. Generators and loaders only
    produce canonical matrices, `validate` checks arbitrary ones.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise CanonicalFormError(f"Invalid shape {self.shape}")
        if len(self.values) >= INDEX_LIMIT or self.n_cols >= INDEX_LIMIT:
            raise CanonicalFormError("Indices don't fit in 32 bits")
        object.__setattr__(self, "row_ptr", np.asarray(self.row_ptr, dtype=np.int32))
        object.__setattr__(self, "col_idx", np.asarray(self.col_idx, dtype=np.int32))
        Precision.of(self.values)
        if len(self.row_ptr) != self.n_rows + 1:
            raise CanonicalFormError(
                f"row_ptr has {len(self.row_ptr)} entries, expected {self.n_rows + 1}"
            )
        if len(self.col_idx) != len(self.values):
            raise CanonicalFormError("col_idx and values differ in length")

    @classmethod
    def from_scipy(cls, S: scipy.sparse.spmatrix) -> CsrMatrix:
        """Canonicalises (sums duplicates, sorts columns) any scipy sparse matrix."""
        S = scipy.sparse.csr_matrix(S, copy=True)
        S.sum_duplicates()
        S.sort_indices()
        n_rows, n_cols = S.shape
        values = S.data
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        return cls(n_rows, n_cols, S.indptr, S.indices, values)

    @classmethod
    def from_dense(cls, D: np.ndarray) -> CsrMatrix:
        """Stores every nonzero of a dense matrix."""
        return cls.from_scipy(scipy.sparse.csr_matrix(D))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def precision(self) -> Precision:
        return Precision.of(self.values)

    @functools.cached_property
    def scipy(self) -> scipy.sparse.csr_matrix:
        """A scipy view over the same arrays."""
        return scipy.sparse.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=self.shape, copy=False
        )

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def to_dense(self) -> np.ndarray:
        return self.scipy.toarray()

    def is_canonical(self) -> bool:
        try:
            self.validate()
        except CanonicalFormError:
            return False
        return True

    def validate(self) -> None:
        """Raises `CanonicalFormError` unless the arrays are in canonical form."""
        rp, ci = self.row_ptr, self.col_idx
        if rp[0] != 0 or rp[-1] != self.nnz:
            raise CanonicalFormError("row_ptr must start at 0 and end at nnz")
        lengths = np.diff(rp)
        if np.any(lengths < 0):
            raise CanonicalFormError("row_ptr is not nondecreasing")
        if self.nnz and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise CanonicalFormError("Column index out of range")
        # Within a row, successive columns must strictly increase. Row starts
        # are exempt from the comparison with the previous entry.
        increasing = np.diff(ci.astype(np.int64)) > 0
        row_start = np.zeros(self.nnz, dtype=bool)
        row_start[rp[:-1][lengths > 0]] = True
        if not np.all(increasing | row_start[1:]):
            raise CanonicalFormError("Columns within a row are not strictly increasing")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore


def convert_vector(x: np.ndarray, target: Precision) -> np.ndarray:
    """Rounds every entry to nearest in `target`, fp32 to fp64 is exact.

    Raises:
        PrecisionOverflowError: An entry is finite in `x` but not in `target`.
    """
    with np.errstate(over="ignore"):
        y = x.astype(target.dtype)
    bad = np.flatnonzero(np.isfinite(x) & ~np.isfinite(y))
    if bad.size:
        i = int(bad[0])
        raise PrecisionOverflowError(i, float(x[i]), target.value)
    return y


def convert_matrix(A: CsrMatrix, target: Precision) -> CsrMatrix:
    """Same sparsity (shared index arrays), values cast as in `convert_vector`."""
    if A.precision is target:
        return A
    try:
        values = convert_vector(A.values, target)
    except PrecisionOverflowError as exc:
        i = exc.index
        row = int(np.searchsorted(A.row_ptr, i, side="right")) - 1
        raise PrecisionOverflowError(
            (row, int(A.col_idx[i])), exc.value, target.value
        ) from exc
    log.debug("Converted %dx%d matrix to %s", A.n_rows, A.n_cols, target.value)
    return CsrMatrix(A.n_rows, A.n_cols, A.row_ptr, A.col_idx, values)


def gemv(
    A: np.ndarray,
    x: np.ndarray,
    *,
    transpose: bool = False,
    alpha: float = 1.0,
    beta: float = 0.0,
    y: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Returns ``alpha * op(A) @ x + beta * y`` computed in the operands' precision.

    Args:
        A: Dense 2-D array, typically the active columns of a `MultiVector`.
        transpose: Use ``A.T`` for ``op(A)``.
        y: Only read when `beta` is nonzero. Never modified.
    """
    operands = (A, x) if y is None else (A, x, y)
    precision = check_same_precision(*operands)
    rows, cols = A.shape
    inner, outer = (rows, cols) if transpose else (cols, rows)
    if x.shape != (inner,):
        raise ShapeError(f"x has shape {x.shape}, expected ({inner},)")
    if y is not None and y.shape != (outer,):
        raise ShapeError(f"y has shape {y.shape}, expected ({outer},)")
    scalar = precision.dtype.type
    out = A.T @ x if transpose else A @ x
    if alpha != 1.0:
        out *= scalar(alpha)
    if y is not None and beta != 0.0:
        out += scalar(beta) * y
    return out


def norm2(x: np.ndarray) -> np.floating:
    """Euclidean norm, accumulated in the precision of `x`."""
    Precision.of(x)
    if x.size == 0:
        return x.dtype.type(0.0)
    return np.sqrt(np.dot(x, x))


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Returns ``alpha * x + y``."""
    precision = check_same_precision(x, y)
    if x.shape != y.shape:
        raise ShapeError(f"Shapes {x.shape} and {y.shape} differ")
    return precision.dtype.type(alpha) * x + y


def trsv_upper(R: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Back substitution with a small dense upper triangular `R`."""
    check_same_precision(R, b)
    return scipy.linalg.solve_triangular(R, b, lower=False, check_finite=False)


class MultiVector:
    """A fixed-capacity block of column vectors sharing length and precision.

    Columns are stored contiguously (Fortran order) so that the active block
    ``data[:, :count]`` goes straight to BLAS in both `gemv` directions.
    """

    def __init__(self, n: int, capacity: int, precision: Precision) -> None:
        self.data = np.zeros((n, capacity), dtype=precision.dtype, order="F")
        self.count = 0

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def capacity(self) -> int:
        return self.data.shape[1]

    @property
    def precision(self) -> Precision:
        return Precision.of(self.data)

    @property
    def active(self) -> np.ndarray:
        return self.data[:, : self.count]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, j: int) -> np.ndarray:
        if not 0 <= j < self.count:
            raise IndexError(j)
        return self.data[:, j]

    def append(self, v: np.ndarray) -> None:
        check_same_precision(self.data, v)
        if v.shape != (self.n,):
            raise ShapeError(f"Column has shape {v.shape}, expected ({self.n},)")
        if self.count == self.capacity:
            raise IndexError("MultiVector is full")
        self.data[:, self.count] = v
        self.count += 1


class HessenbergLS:
    """The ``(m+1) x m`` Hessenberg least-squares problem of one GMRES cycle.

    `H` keeps the Arnoldi coefficients untouched, `R` holds the same columns
    after the Givens rotations were applied, and `rhs` starts as ``gamma * e1``.
    """

    def __init__(self, m: int, gamma: float, precision: Precision) -> None:
        dt = precision.dtype
        self.H = np.zeros((m + 1, m), dtype=dt)
        self.R = np.zeros((m + 1, m), dtype=dt)
        self.givens_cos = np.zeros(m, dtype=dt)
        self.givens_sin = np.zeros(m, dtype=dt)
        self.rhs = np.zeros(m + 1, dtype=dt)
        self.rhs[0] = gamma
        self.implicit_resnorm = dt.type(abs(gamma))

    @property
    def m(self) -> int:
        return self.H.shape[1]

    @property
    def precision(self) -> Precision:
        return Precision.of(self.H)
