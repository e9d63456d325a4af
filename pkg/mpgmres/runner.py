#!/usr/bin/env python3

"""
mpgmres.runner
~~~~~~~~~~~~~~

Contains `Runner`.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from mpgmres.core import CsrMatrix
from mpgmres.fileio import load_matrix_market
from mpgmres.gen import generate, make_rhs
from mpgmres.precond import (
    Permutation,
    Preconditioner,
    build_block_jacobi,
    build_poly_precond,
    rcm_reorder,
)
from mpgmres.solvers import gmres_fd, gmres_ir, gmres_restarted
from mpgmres.types import (
    PrecondKind,
    PrecondSpec,
    Precision,
    RunConfig,
    SolverKind,
    SolveReport,
)

log = logging.getLogger(__name__)


def build_precond(
    spec: PrecondSpec, A: CsrMatrix, precision: Precision, seed: int = 0
) -> Optional[Preconditioner]:
    """The preconditioner `spec` asks for, built in `precision`."""
    if spec.kind is PrecondKind.Jacobi:
        return build_block_jacobi(A, spec.param, precision)
    if spec.kind is PrecondKind.Poly:
        return build_poly_precond(A, spec.param, seed, precision)
    return None


class Runner:
    """Executes the solve a `RunConfig` describes.

    Everything that isn't part of the solve proper (reading or generating the
    matrix, RCM, the right-hand side, building preconditioners) happens in the
    constructor, so `run` can be repeated and timed on its own. Solutions are
    returned in the original numbering even when RCM reordered the system.
    """

    def __init__(self, config: RunConfig, A: Optional[CsrMatrix] = None) -> None:
        log.debug("Called with config=%s, A=%s", config, "given" if A else None)
        self.__config = config
        if A is None:
            if config.matrix is not None:
                A = load_matrix_market(config.matrix)
            else:
                A = generate(config.gen)  # type: ignore
        self.__original = A
        b = make_rhs(config.rhs, A.n_rows)
        self.__perm: Optional[Permutation] = None
        if config.rcm:
            self.__perm, A = rcm_reorder(A)
            b = self.__perm.apply(b)
        self.__A = A
        self.__b = b

        precision = config.effective_precond_precision
        self.__precond = build_precond(config.precond, A, precision, config.seed)
        self.__precond64 = self.__precond
        if config.solver is SolverKind.FD and config.precond_precision is None:
            self.__precond64 = build_precond(
                config.precond, A, Precision.FP64, config.seed
            )

    @property
    def config(self) -> RunConfig:
        return self.__config

    @property
    def matrix(self) -> CsrMatrix:
        """The system matrix as solved, after reordering."""
        return self.__A

    @property
    def original_matrix(self) -> CsrMatrix:
        return self.__original

    @property
    def rhs(self) -> np.ndarray:
        """The right-hand side in the original numbering."""
        if self.__perm is None:
            return self.__b
        return self.__perm.unapply(self.__b)

    @property
    def permutation(self) -> Optional[Permutation]:
        return self.__perm

    @property
    def precond(self) -> Optional[Preconditioner]:
        return self.__precond

    def run(self) -> SolveReport:
        """Solves once, from a zero initial guess."""
        config = self.__config
        A, b, criteria = self.__A, self.__b, config.criteria
        log.info(
            "Solving %s with %s, precond %s",
            config.name,
            config.solver.value,
            config.precond,
        )
        if config.solver is SolverKind.Double:
            report = gmres_restarted(
                A, b, None, criteria, self.__precond, Precision.FP64
            )
        elif config.solver is SolverKind.Single:
            report = gmres_restarted(
                A, b, None, criteria, self.__precond, Precision.FP32
            )
        elif config.solver is SolverKind.IR:
            report = gmres_ir(A, b, None, criteria, self.__precond)
        else:
            report = gmres_fd(
                A,
                b,
                None,
                criteria,
                config.switch_iter,
                precond32=self.__precond,
                precond64=self.__precond64,
            )
        if self.__perm is not None:
            report.x = self.__perm.unapply(report.x)
        return report
