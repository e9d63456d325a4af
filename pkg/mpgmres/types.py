#!/usr/bin/env python3

"""
mpgmres.types
~~~~~~~~~~~~~

Enumerations and records shared by the solvers, the generators, the file
formats and the benchmark harness.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import pathlib
import re
from typing import Dict, Final, List, Optional, Tuple

import numpy as np

from mpgmres.util import ConfigError, Kernel, PrecisionError


class Precision(enum.Enum):
    """Working precision of a kernel, a vector or a matrix."""

    FP32 = "fp32"
    """IEEE single precision."""

    FP64 = "fp64"
    """IEEE double precision."""

    @property
    def dtype(self) -> np.dtype:
        """Numpy dtype used to store scalars of this precision."""
        return np.dtype(np.float32 if self is Precision.FP32 else np.float64)

    @property
    def unit_roundoff(self) -> float:
        """Relative rounding error bound, 2^-24 or 2^-53."""
        return 2.0**-24 if self is Precision.FP32 else 2.0**-53

    @classmethod
    def of(cls, a: np.ndarray) -> Precision:
        """Precision of an array, anything but float32/float64 is rejected."""
        if a.dtype == np.float32:
            return cls.FP32
        if a.dtype == np.float64:
            return cls.FP64
        raise PrecisionError(f"Unsupported scalar type {a.dtype}")


PRECISIONS: Final = tuple(p.value for p in Precision)

FP32_TOL_FLOOR: Final = 1e-6
"""Relative residual below which fp32 GMRES is not expected to get."""


class SolverKind(enum.Enum):
    """Solver a `RunConfig` asks for."""

    Double = "double"
    """GMRES(m) entirely in fp64."""

    Single = "single"
    """GMRES(m) entirely in fp32."""

    IR = "ir"
    """GMRES-IR, fp32 inner cycles refined in fp64 at every restart."""

    FD = "fd"
    """GMRES-FD, fp32 GMRES(m) then fp64 GMRES(m) from the fp32 solution."""


SOLVERS: Final = tuple(s.value for s in SolverKind)


class RhsKind(enum.Enum):
    """Right-hand side vector kinds."""

    Ones = "ones"
    FromFile = "file"
    RandomUniform01 = "uniform"
    RandomNormal = "normal"


class StencilKind(enum.Enum):
    """Finite difference problems the generator knows about."""

    Laplace2D = "laplace2d"
    Laplace3D = "laplace3d"
    ConvDiff2D = "convdiff2d"
    Stretched2D = "stretched2d"
    Biharmonic2D = "biharmonic2d"
    Star2D = "star2d"
    Recirc2D = "recirc2d"

    @property
    def dims(self) -> int:
        return 3 if self is StencilKind.Laplace3D else 2

    @property
    def offsets(self) -> Tuple[Tuple[int, ...], ...]:
        """Stencil neighbour offsets, the centre included."""
        if self is StencilKind.Laplace3D:
            return (
                (0, 0, 0),
                (-1, 0, 0),
                (1, 0, 0),
                (0, -1, 0),
                (0, 1, 0),
                (0, 0, -1),
                (0, 0, 1),
            )
        five = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))
        if self is StencilKind.Star2D:
            return five + ((-1, -1), (1, -1), (-1, 1), (1, 1))
        if self is StencilKind.Biharmonic2D:
            return five + (
                (-1, -1),
                (1, -1),
                (-1, 1),
                (1, 1),
                (-2, 0),
                (2, 0),
                (0, -2),
                (0, 2),
            )
        return five


class ConvectionField(enum.Enum):
    """Velocity fields for the convection-diffusion generators."""

    Uniform = "uniform"
    """Constant flow ``(c, 0)`` on the unit square ("UniFlow")."""

    BentPipe = "bentpipe"
    """``c * (2y(1 - x^2), -2x(1 - y^2))`` on [-1, 1]^2."""

    Recirc = "recirc"
    """``c * (4x(x - 1)(1 - 2y), -4y(y - 1)(1 - 2x))`` on the unit square."""


PROBLEM_NAMES: Final[Dict[str, Tuple[StencilKind, Optional[ConvectionField]]]] = {
    **{kind.value: (kind, None) for kind in StencilKind},
    "uniflow2d": (StencilKind.ConvDiff2D, ConvectionField.Uniform),
    "bentpipe2d": (StencilKind.ConvDiff2D, ConvectionField.BentPipe),
}
"""Lowercase problem names ``StencilSpec.parse`` understands."""


@dataclasses.dataclass(frozen=True)
class StencilSpec:
    """Describes a generated matrix completely."""

    kind: StencilKind
    nx: int
    """Grid points per dimension."""

    field: ConvectionField = ConvectionField.Uniform
    """Only used by `StencilKind.ConvDiff2D`."""

    magnitude: float = 10.0
    """Convection strength for `ConvDiff2D` and `Recirc2D`."""

    stretch: float = 1e4
    """Ratio of y to x couplings for `Stretched2D`."""

    def __post_init__(self):
        if self.nx < 2:
            raise ConfigError(f"nx must be at least 2, got {self.nx}")
        if self.magnitude < 0 or not math.isfinite(self.magnitude):
            raise ConfigError(f"Invalid convection magnitude {self.magnitude}")
        if self.stretch <= 0 or not math.isfinite(self.stretch):
            raise ConfigError(f"Invalid stretch ratio {self.stretch}")
        if self.kind is StencilKind.Recirc2D:
            object.__setattr__(self, "field", ConvectionField.Recirc)

    @property
    def has_convection(self) -> bool:
        return self.kind in (StencilKind.ConvDiff2D, StencilKind.Recirc2D)

    @property
    def n(self) -> int:
        """Number of unknowns."""
        return self.nx**self.kind.dims

    @property
    def nnz(self) -> int:
        """Stored entries, counted from the stencil without building anything.

        An offset contributes one entry per grid point whose neighbour in that
        direction lies inside the grid (Dirichlet truncation).
        """
        total = 0
        for offset in self.kind.offsets:
            count = 1
            for o in offset:
                count *= max(self.nx - abs(o), 0)
            total += count
        return total

    def __str__(self) -> str:
        s = f"{self.kind.value}:{self.nx}"
        if self.kind is StencilKind.ConvDiff2D:
            s += f":field={self.field.value}:c={self.magnitude!r}"
        elif self.kind is StencilKind.Recirc2D:
            s += f":c={self.magnitude!r}"
        elif self.kind is StencilKind.Stretched2D:
            s += f":stretch={self.stretch!r}"
        return s

    @classmethod
    def parse(cls, text: str) -> StencilSpec:
        """Reads ``kind:nx[:key=value]..`` or a problem name like ``BentPipe2D1500``.

        Keys are ``field``, ``c`` (convection magnitude) and ``stretch``.
        """
        head, *options = text.strip().split(":")
        named = re.fullmatch(r"([a-z]+[23]d)(\d+)", head.lower())
        if named:
            if options:
                raise ConfigError(f"'{head}' takes no options")
            head, options = named.group(1), [named.group(2)]
        if head.lower() not in PROBLEM_NAMES:
            raise ConfigError(f"Unknown problem '{head}'")
        kind, field = PROBLEM_NAMES[head.lower()]
        if not options:
            raise ConfigError(f"'{text}' is missing the grid size")
        kwargs: Dict[str, object] = {}
        if field is not None:
            kwargs["field"] = field
        try:
            nx = int(options[0])
            for option in options[1:]:
                key, _, value = option.partition("=")
                if key == "field":
                    kwargs["field"] = ConvectionField(value.lower())
                elif key == "c":
                    kwargs["magnitude"] = float(value)
                elif key == "stretch":
                    kwargs["stretch"] = float(value)
                else:
                    raise ConfigError(f"Unknown option '{key}' in '{text}'")
        except ValueError as exc:
            raise ConfigError(f"Invalid problem '{text}': {exc}") from exc
        return cls(kind, nx, **kwargs)  # type: ignore


@dataclasses.dataclass(frozen=True)
class RhsSpec:
    """How the right-hand side is made, see `mpgmres.gen.make_rhs`."""

    kind: RhsKind = RhsKind.Ones
    seed: int = 0
    """Used by the random kinds only."""

    path: Optional[pathlib.Path] = None
    """Used by `RhsKind.FromFile` only."""

    def __post_init__(self):
        if self.kind is RhsKind.FromFile and self.path is None:
            raise ConfigError("A file right-hand side needs a path")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> RhsSpec:
        """``ones``, ``uniform``, ``normal`` or ``file:PATH``."""
        kind, _, rest = text.strip().partition(":")
        try:
            rhs_kind = RhsKind(kind.lower())
        except ValueError as exc:
            raise ConfigError(f"Unknown rhs kind '{kind}'") from exc
        if rhs_kind is RhsKind.FromFile:
            if not rest:
                raise ConfigError("rhs=file needs a path, e.g. file:b.mtx")
            return cls(rhs_kind, seed, pathlib.Path(rest))
        return cls(rhs_kind, seed)

    def __str__(self) -> str:
        if self.kind is RhsKind.FromFile:
            return f"file:{self.path}"
        return self.kind.value


class PrecondKind(enum.Enum):
    """Right preconditioners."""

    None_ = "none"
    Jacobi = "jacobi"
    """Block Jacobi, the parameter is the block size."""

    Poly = "poly"
    """GMRES polynomial, the parameter is the degree."""


@dataclasses.dataclass(frozen=True)
class PrecondSpec:
    """A preconditioner request like ``jacobi:42`` or ``poly:40``."""

    kind: PrecondKind = PrecondKind.None_
    param: int = 0

    def __post_init__(self):
        if self.kind is PrecondKind.Jacobi and self.param < 1:
            raise ConfigError("Block size must be a positive integer")
        if self.kind is PrecondKind.Poly and self.param < 0:
            raise ConfigError("Polynomial degree must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> PrecondSpec:
        kind, _, param = text.strip().partition(":")
        try:
            precond_kind = PrecondKind(kind.lower())
        except ValueError as exc:
            raise ConfigError(f"Unknown preconditioner '{kind}'") from exc
        if precond_kind is PrecondKind.None_:
            return cls()
        try:
            return cls(precond_kind, int(param))
        except ValueError as exc:
            raise ConfigError(f"'{text}' needs an integer parameter") from exc

    def __str__(self) -> str:
        if self.kind is PrecondKind.None_:
            return "none"
        return f"{self.kind.value}:{self.param}"


@dataclasses.dataclass(frozen=True)
class StopCriteria:
    """When GMRES stops, and how often it restarts."""

    rtol: float = 1e-10
    """Relative residual tolerance, ``||b - Ax|| / ||b||``."""

    max_iters: int = 20000
    m: int = 50
    """Restart length."""

    restart_on_loss: bool = False
    """Restart from the current iterate when loss of accuracy is detected,
    instead of stopping."""

    def __post_init__(self):
        if not 0 < self.rtol < 1:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.m < 1:
            raise ValueError(f"Restart length must be positive, got {self.m}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be positive, got {self.max_iters}")

    def replace(self, **changes) -> StopCriteria:
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass
class HistoryEntry:
    """One row of the convergence history.

    ``explicit_relres`` is only known at restart boundaries.
    """

    iteration: int
    implicit_relres: Optional[float]
    explicit_relres: Optional[float]
    phase: Precision


@dataclasses.dataclass
class SolveReport:
    """Everything a solver driver returns."""

    x: np.ndarray
    """Solution, always fp64."""

    converged: bool = False
    iters_fp32: int = 0
    iters_fp64: int = 0
    residual_history: List[HistoryEntry] = dataclasses.field(default_factory=list)
    kernel_times: Dict[Kernel, float] = dataclasses.field(default_factory=dict)
    loss_of_accuracy: bool = False
    """The implicit residual claimed convergence the explicit one didn't confirm."""

    stalled: bool = False
    """Diagnostic only, explicit residual stopped improving by 1% per restart."""

    solve_time: float = 0.0

    @property
    def total_iters(self) -> int:
        return self.iters_fp32 + self.iters_fp64

    @property
    def explicit_history(self) -> List[HistoryEntry]:
        return [e for e in self.residual_history if e.explicit_relres is not None]

    @property
    def best_explicit_relres(self) -> float:
        values = [e.explicit_relres for e in self.explicit_history]
        return min(values) if values else math.inf  # type: ignore

    @property
    def final_relres(self) -> float:
        entries = self.explicit_history
        if not entries:
            return math.inf
        return entries[-1].explicit_relres  # type: ignore


class Quadrant(enum.Enum):
    """Where an SpMV benchmark result falls on the speedup vs. densest row plot."""

    TopLeft = "top-left"
    """Fewer than 15 nonzeros in every row and at least 1.7x speedup."""

    TopRight = "top-right"
    BottomLeft = "bottom-left"
    BottomRight = "bottom-right"


@dataclasses.dataclass
class RunConfig:
    """A complete description of one experiment.

    Exactly one of `matrix` and `gen` gives the matrix.
    """

    solver: SolverKind
    matrix: Optional[pathlib.Path] = None
    gen: Optional[StencilSpec] = None
    m: int = 50
    tol: float = 1e-10
    max_iters: int = 20000
    precond: PrecondSpec = PrecondSpec()
    precond_precision: Optional[Precision] = None
    """Defaults to fp64 for the double solver and fp32 for the others."""

    rcm: bool = False
    rhs: RhsSpec = RhsSpec()
    switch_iter: int = 0
    seed: int = 0
    out: Optional[pathlib.Path] = None
    override_fp32_floor: bool = False
    """Lets the single precision solver aim below `FP32_TOL_FLOOR`."""

    def __post_init__(self):
        if (self.matrix is None) == (self.gen is None):
            raise ConfigError("Exactly one of matrix and gen is required")
        if self.m < 1:
            raise ConfigError(f"m must be positive, got {self.m}")
        if not 0 < self.tol < 1:
            raise ConfigError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be positive, got {self.max_iters}")
        if self.switch_iter < 0:
            raise ConfigError("switch_iter can't be negative")
        if self.solver is SolverKind.FD and self.switch_iter % self.m:
            raise ConfigError(
                f"switch_iter={self.switch_iter} is not a multiple of m={self.m}"
            )
        if (
            self.solver is SolverKind.Single
            and self.tol < FP32_TOL_FLOOR
            and not self.override_fp32_floor
        ):
            raise ConfigError(
                f"tol={self.tol} is below what fp32 can reach ({FP32_TOL_FLOOR}), "
                "set override_fp32_floor to run anyway"
            )

    @property
    def criteria(self) -> StopCriteria:
        return StopCriteria(rtol=self.tol, max_iters=self.max_iters, m=self.m)

    @property
    def name(self) -> str:
        if self.matrix is not None:
            return self.matrix.stem
        return str(self.gen)

    @property
    def effective_precond_precision(self) -> Precision:
        if self.precond_precision is not None:
            return self.precond_precision
        if self.solver is SolverKind.Double:
            return Precision.FP64
        return Precision.FP32

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

