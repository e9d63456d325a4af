#!/usr/bin/env python3

"""
mpgmres.spmv
~~~~~~~~~~~~

The CSR sparse matrix-vector product and a cache-reuse model of how much
faster it gets going from fp64 to fp32.

The model assumes ``w`` nonzeros per row. In fp64 every ``x[col]`` read misses
the cache, in fp32 ``x`` is read from memory exactly once. Row pointer reads and
writes to ``y`` are ignored.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import NamedTuple

import numpy as np

from mpgmres.core import CsrMatrix
from mpgmres.types import Precision
from mpgmres.util import ModelDomainError, PrecisionError, ShapeError

log = logging.getLogger(__name__)


def spmv(A: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Returns ``A @ x`` accumulated row by row in the precision of `A`."""
    if x.shape != (A.n_cols,):
        raise ShapeError(f"x has shape {x.shape}, A is {A.n_rows}x{A.n_cols}")
    if Precision.of(x) is not A.precision:
        raise PrecisionError(
            f"A is {A.precision.value} but x is {Precision.of(x).value}"
        )
    return A.scipy @ x


def max_nnz_row(A: CsrMatrix) -> int:
    """Nonzeros in the densest row."""
    return int(A.row_lengths().max())


def nnz_per_row(A: CsrMatrix) -> float:
    """Average nonzeros per row, the ``w`` of the model."""
    return A.nnz / A.n_rows


@dataclasses.dataclass(frozen=True)
class SpmvModelInput:
    """Matrix dimensions and storage sizes in bytes the model works with."""

    w: float
    n: int
    int_size: int = 4
    float_size: int = 4
    double_size: int = 8

    def __post_init__(self):
        if self.w < 1:
            raise ModelDomainError(f"w must be at least 1, got {self.w}")
        if self.n < 1:
            raise ModelDomainError(f"n must be positive, got {self.n}")


class CacheReadVolumes(NamedTuple):
    double_reads: float
    float_reads: float


def cache_read_volumes(inp: SpmvModelInput) -> CacheReadVolumes:
    """Bytes read into cache by one SpMV in each precision.

    With the default sizes these are ``20wn`` and ``(8w + 4)n``.
    """
    double_reads = inp.n * inp.w * (inp.int_size + 2 * inp.double_size)
    float_reads = inp.n * inp.w * (inp.int_size + inp.float_size)
    float_reads += inp.n * inp.float_size
    return CacheReadVolumes(double_reads, float_reads)


def predicted_speedup(w: float) -> float:
    """fp64 to fp32 SpMV speedup under perfect fp32 caching of ``x``, ``5w/(2w+1)``.

    Raises:
        ModelDomainError: When ``w < 1``.
    """
    if not w >= 1:
        raise ModelDomainError(f"w must be at least 1, got {w}")
    return 5 * w / (2 * w + 1)


def naive_speedup(inp: SpmvModelInput = SpmvModelInput(1.0, 1)) -> float:
    """The speedup expected from halving the value size alone, no cache effects.

    Only the matrix values shrink, the column indices stay 32-bit, giving 1.5x.
    """
    return (inp.double_size + inp.int_size) / (inp.float_size + inp.int_size)
