#!/usr/bin/env python3

"""
mpgmres.util
~~~~~~~~~~~~

Contains:
- Errors: The exception hierarchy used by every other module.
- Kernel timing: `Kernel` categories and the `KernelTimer` accumulator.
- Helpers: Seeded random generators.
"""

from __future__ import annotations

import collections
import contextlib
import enum
import logging
import time
from typing import Dict, Final, Iterator, Optional

import numpy as np

log = logging.getLogger(__name__)

# * Errors


class MpgmresError(Exception):
    """Base class of all the errors raised by mpgmres."""


class PrecisionError(MpgmresError):
    """Raised when operands of a kernel don't share one precision."""


class PrecisionOverflowError(MpgmresError):
    """Raised when a value doesn't fit in the range of the target precision.

    Signals that the data needs scaling before it can be cast down.
    """

    def __init__(self, index: object, value: float, target: str) -> None:
        self.index = index
        self.value = value
        super().__init__(f"{value!r} at {index} overflows {target}")


class ShapeError(MpgmresError, ValueError):
    """Raised when operands are not conformal."""


class CanonicalFormError(MpgmresError, ValueError):
    """Raised when CSR arrays violate the canonical form."""


class DivergenceError(MpgmresError, ArithmeticError):
    """Raised when a solver produces non-finite values."""


class SingularHessenbergError(MpgmresError, ArithmeticError):
    """Raised when the rotated Hessenberg factor has a zero on its diagonal."""


class SingularBlockError(MpgmresError, ArithmeticError):
    """Raised when a block Jacobi diagonal block can't be factored."""

    def __init__(self, block: int) -> None:
        self.block = block
        super().__init__(f"Diagonal block {block} is singular")


class ModelDomainError(MpgmresError, ValueError):
    """Raised when the SpMV model is evaluated outside of its domain."""


class MatrixMarketError(MpgmresError):
    """Base class for Matrix Market reading errors."""


class UnsupportedFormatError(MatrixMarketError):
    """Raised for Matrix Market files other than coordinate real/integer."""


class MatrixMarketParseError(MatrixMarketError):
    """Raised for malformed Matrix Market data, `lineno` is 1-based."""

    def __init__(self, msg: str, lineno: int) -> None:
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}")


class ConfigError(MpgmresError, ValueError):
    """Raised when a run configuration is malformed or inconsistent."""


class ResourceError(MpgmresError):
    """Raised when a run can't allocate the memory it needs."""


# * Kernel timing


class Kernel(enum.Enum):
    """Categories solve time is binned into."""

    SpMV = "spmv"
    """Sparse matrix-vector products, including those inside preconditioners."""

    GemvTrans = "gemv_trans"
    """Projections onto the Krylov basis, ``V^T w``."""

    Norm = "norm"
    """Vector 2-norms."""

    GemvNoTrans = "gemv_notrans"
    """Basis combinations, ``w - V h`` and ``V y``."""

    Other = "other"
    """Everything else: casts, fp64 residuals, small dense work, vector updates."""


TIMED_KERNELS: Final = (Kernel.SpMV, Kernel.GemvTrans, Kernel.Norm, Kernel.GemvNoTrans)


class KernelTimer:
    """Accumulates wall clock time per `Kernel` around call sites.

    `start` and `stop` bracket the whole solve. Whatever isn't measured inside a
    `time` block is attributed to `Kernel.Other`, so the categories of
    `breakdown` always add up to `elapsed`.
    """

    def __init__(self) -> None:
        self.times: Dict[Kernel, float] = dict.fromkeys(Kernel, 0.0)
        self.calls: collections.Counter = collections.Counter()
        self.__started: Optional[float] = None
        self.__elapsed = 0.0

    @contextlib.contextmanager
    def time(self, kernel: Kernel) -> Iterator[None]:
        """Times the body of the ``with`` statement as `kernel`."""
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.times[kernel] += time.perf_counter() - t0
            self.calls[kernel] += 1

    def start(self) -> None:
        """Starts (or resumes) the total clock."""
        if self.__started is None:
            self.__started = time.perf_counter()

    def stop(self) -> None:
        """Pauses the total clock. Setup work between runs goes untimed."""
        if self.__started is not None:
            self.__elapsed += time.perf_counter() - self.__started
            self.__started = None

    @property
    def elapsed(self) -> float:
        """Total seconds spent between `start` and `stop` calls."""
        running = 0.0
        if self.__started is not None:
            running = time.perf_counter() - self.__started
        return self.__elapsed + running

    def breakdown(self) -> Dict[Kernel, float]:
        """Seconds per category, ``Other`` absorbs the unattributed time."""
        times = {k: self.times[k] for k in TIMED_KERNELS}
        times[Kernel.Other] = max(self.elapsed - sum(times.values()), 0.0)
        return times


# * Helpers


def rng(seed: int) -> np.random.Generator:
    """All randomness in mpgmres goes through here so runs are reproducible."""
    return np.random.default_rng(seed)
