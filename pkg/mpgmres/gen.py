#!/usr/bin/env python3

"""
mpgmres.gen
~~~~~~~~~~~

Finite difference matrices on regular grids with Dirichlet boundaries, and
right-hand side vectors.

Grid points are numbered lexicographically with x fastest. Coefficients are
scaled by ``h^2``, so the Laplacian has ``2 * dims`` on the diagonal and
``-1`` for every neighbour.
"""

from __future__ import annotations

import logging
from typing import Dict, Tuple

import numpy as np
import scipy.sparse

from mpgmres.core import CsrMatrix
from mpgmres.fileio import load_vector
from mpgmres.types import ConvectionField, RhsKind, RhsSpec, StencilKind, StencilSpec
from mpgmres.util import ShapeError, rng

log = logging.getLogger(__name__)

Offset = Tuple[int, ...]

# Weights by taxicab length of the offset.
_STENCIL_WEIGHTS: Dict[StencilKind, Dict[int, float]] = {
    StencilKind.Laplace2D: {0: 4.0, 1: -1.0},
    StencilKind.Laplace3D: {0: 6.0, 1: -1.0},
    StencilKind.Star2D: {0: 8.0, 1: -1.0, 2: -1.0},
}

_BIHARMONIC_WEIGHTS = {"centre": 20.0, "axial": -8.0, "diagonal": 2.0, "far": 1.0}


def _grid(spec: StencilSpec) -> np.ndarray:
    """Integer coordinates of every point, shape ``(n, dims)``."""
    coords = np.unravel_index(np.arange(spec.n), (spec.nx,) * spec.kind.dims)
    return np.stack(coords[::-1], axis=1)


def _flat_index(points: np.ndarray, nx: int) -> np.ndarray:
    strides = nx ** np.arange(points.shape[1])
    return points @ strides


def _velocity(spec: StencilSpec, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Convection field at every grid point, in physical coordinates."""
    if spec.field is ConvectionField.BentPipe:
        h = 2.0 / (spec.nx + 1)
        x, y = (-1.0 + (points[:, 0] + 1) * h, -1.0 + (points[:, 1] + 1) * h)
        bx, by = 2 * y * (1 - x**2), -2 * x * (1 - y**2)
    else:
        h = 1.0 / (spec.nx + 1)
        x, y = ((points[:, 0] + 1) * h, (points[:, 1] + 1) * h)
        if spec.field is ConvectionField.Recirc:
            bx = 4 * x * (x - 1) * (1 - 2 * y)
            by = -4 * y * (y - 1) * (1 - 2 * x)
        else:
            bx, by = np.ones_like(x), np.zeros_like(y)
    c = spec.magnitude * h / 2
    return c * bx, c * by


def _weights(spec: StencilSpec, offset: Offset, points: np.ndarray) -> np.ndarray:
    """Coefficient of `offset` in the row of every point in `points`."""
    kind = spec.kind
    length = sum(abs(o) for o in offset)
    n = len(points)
    if kind in _STENCIL_WEIGHTS:
        return np.full(n, _STENCIL_WEIGHTS[kind][length])
    if kind is StencilKind.Stretched2D:
        eps = spec.stretch
        if length == 0:
            return np.full(n, 2.0 + 2.0 * eps)
        return np.full(n, -1.0 if offset[1] == 0 else -eps)
    if kind is StencilKind.Biharmonic2D:
        if length == 0:
            key = "centre"
        elif length == 1:
            key = "axial"
        elif 0 in offset:
            key = "far"
        else:
            key = "diagonal"
        return np.full(n, _BIHARMONIC_WEIGHTS[key])

    # Centered convection on top of the 5-point Laplacian.
    if length == 0:
        return np.full(n, 4.0)
    bx, by = _velocity(spec, points)
    if offset[0]:
        return -1.0 + offset[0] * bx
    return -1.0 + offset[1] * by


def generate(spec: StencilSpec) -> CsrMatrix:
    """Assembles the matrix `spec` describes, explicit zeros kept.

    ``nnz`` always equals `StencilSpec.nnz`.
    """
    log.debug("Called with spec=%s", spec)
    nx = spec.nx
    points = _grid(spec)
    index = _flat_index(points, nx)
    rows, cols, vals = [], [], []
    for offset in spec.kind.offsets:
        shifted = points + np.array(offset)
        inside = np.all((shifted >= 0) & (shifted < nx), axis=1)
        rows.append(index[inside])
        cols.append(_flat_index(shifted[inside], nx))
        vals.append(_weights(spec, offset, points[inside]))
    S = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(spec.n, spec.n),
    )
    A = CsrMatrix.from_scipy(S.tocsr())
    log.info("Generated %s: n=%d, nnz=%d", spec, A.n_rows, A.nnz)
    return A


def make_rhs(spec: RhsSpec, n: int) -> np.ndarray:
    """A fp64 right-hand side of length `n`, reproducible for a fixed seed.

    Uniform entries lie in the open interval (0, 1).

    Raises:
        ShapeError: A vector read from file has the wrong length.
    """
    log.debug("Called with spec=%s, n=%d", spec, n)
    if spec.kind is RhsKind.Ones:
        return np.ones(n)
    if spec.kind is RhsKind.RandomUniform01:
        return rng(spec.seed).uniform(np.nextafter(0.0, 1.0), 1.0, n)
    if spec.kind is RhsKind.RandomNormal:
        return rng(spec.seed).standard_normal(n)
    b = load_vector(spec.path)  # type: ignore
    if b.shape != (n,):
        raise ShapeError(f"{spec.path} holds {len(b)} entries, expected {n}")
    return b
