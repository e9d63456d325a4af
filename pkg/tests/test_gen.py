#!/usr/bin/env python3

"""Tests the stencil generators, problem names and right-hand sides."""

import numpy as np
import pytest

from mpgmres.gen import generate, make_rhs
from mpgmres.types import (
    ConvectionField,
    RhsKind,
    RhsSpec,
    StencilKind,
    StencilSpec,
)
from mpgmres.util import ConfigError, ShapeError

NNZ_FORMULAS = {
    StencilKind.Laplace2D: lambda n: 5 * n**2 - 4 * n,
    StencilKind.Laplace3D: lambda n: 7 * n**3 - 6 * n**2,
    StencilKind.Star2D: lambda n: (3 * n - 2) ** 2,
    StencilKind.Biharmonic2D: lambda n: 13 * n**2 - 20 * n + 4,
    StencilKind.ConvDiff2D: lambda n: 5 * n**2 - 4 * n,
}


def test_laplace2d_smallest():
    A = generate(StencilSpec(StencilKind.Laplace2D, 2))
    assert A.n_rows == 4
    assert A.nnz == 12
    D = A.to_dense()
    assert np.diag(D).tolist() == [4.0] * 4
    assert D.sum(axis=1).tolist() == [2.0] * 4


def test_laplace3d_smallest():
    A = generate(StencilSpec(StencilKind.Laplace3D, 2))
    assert A.n_rows == 8
    D = A.to_dense()
    assert np.diag(D).tolist() == [6.0] * 8
    assert D.sum(axis=1).tolist() == [3.0] * 8


@pytest.mark.parametrize("kind", list(NNZ_FORMULAS))
def test_nnz_formulas(kind: StencilKind):
    formula = NNZ_FORMULAS[kind]
    for nx in range(2, 101):
        assert StencilSpec(kind, nx).nnz == formula(nx)


@pytest.mark.parametrize("kind", list(StencilKind))
def test_generated_nnz_matches_count(kind: StencilKind):
    top = 100 if kind.dims == 2 else 20
    for nx in range(2, top + 1):
        spec = StencilSpec(kind, nx)
        A = generate(spec)
        assert A.n_rows == spec.n
        assert A.nnz == spec.nnz, nx
        if kind in NNZ_FORMULAS:
            assert A.nnz == NNZ_FORMULAS[kind](nx), nx
        if nx in (2, 3, 7):
            assert A.is_canonical()


def test_bentpipe_problem_name():
    spec = StencilSpec.parse("BentPipe2D1500")
    assert spec.kind is StencilKind.ConvDiff2D
    assert spec.field is ConvectionField.BentPipe
    assert spec.n == 2_250_000
    assert spec.nnz == 11_244_000


@pytest.mark.parametrize(
    "kind", [StencilKind.Laplace2D, StencilKind.Laplace3D, StencilKind.Stretched2D]
)
def test_symmetric_kinds(kind: StencilKind):
    D = generate(StencilSpec(kind, 5)).to_dense()
    assert np.array_equal(D, D.T)


def test_convdiff_without_convection_is_laplace():
    laplace = generate(StencilSpec(StencilKind.Laplace2D, 6))
    convdiff = generate(StencilSpec(StencilKind.ConvDiff2D, 6, magnitude=0.0))
    assert convdiff == laplace


@pytest.mark.parametrize("field", list(ConvectionField))
def test_convdiff_is_nonsymmetric(field: ConvectionField):
    D = generate(StencilSpec(StencilKind.ConvDiff2D, 6, field=field)).to_dense()
    assert not np.array_equal(D, D.T)
    assert np.diag(D).tolist() == [4.0] * 36


def test_biharmonic_interior_row_sums_to_zero():
    D = generate(StencilSpec(StencilKind.Biharmonic2D, 5)).to_dense()
    centre = 2 * 5 + 2
    assert D[centre, centre] == 20.0
    assert D[centre].sum() == 0.0


def test_stretched_couplings():
    D = generate(StencilSpec(StencilKind.Stretched2D, 3, stretch=100.0)).to_dense()
    assert D[4, 4] == 202.0
    assert D[4, 3] == D[4, 5] == -1.0
    assert D[4, 1] == D[4, 7] == -100.0


# * Problem names


def test_parse():
    spec = StencilSpec.parse("laplace2d:50")
    assert spec == StencilSpec(StencilKind.Laplace2D, 50)
    recirc = StencilSpec.parse("Recirc2D:8:c=2.5")
    assert recirc.field is ConvectionField.Recirc
    assert recirc.magnitude == 2.5


@pytest.mark.parametrize(
    "text",
    [
        "laplace3d:4",
        "convdiff2d:8:field=bentpipe:c=10.0",
        "stretched2d:5:stretch=1000.0",
        "recirc2d:6:c=3.0",
    ],
)
def test_str_parses_back(text: str):
    spec = StencilSpec.parse(text)
    assert StencilSpec.parse(str(spec)) == spec


@pytest.mark.parametrize(
    "text",
    ["foo:3", "laplace2d", "laplace2d:1", "laplace2d:x", "laplace2d:5:bogus=1"],
)
def test_parse_errors(text: str):
    with pytest.raises(ConfigError):
        StencilSpec.parse(text)


# * Right-hand sides


def test_rhs_ones():
    assert make_rhs(RhsSpec(), 4).tolist() == [1.0] * 4


def test_rhs_uniform():
    b = make_rhs(RhsSpec(RhsKind.RandomUniform01, seed=1), 100_000)
    assert b.min() > 0.0
    assert b.max() < 1.0
    assert b.mean() == pytest.approx(0.5, abs=0.02)


def test_rhs_normal():
    b = make_rhs(RhsSpec(RhsKind.RandomNormal, seed=2), 100_000)
    assert abs(b.mean()) <= 0.05
    assert b.std() == pytest.approx(1.0, abs=0.05)


def test_rhs_is_reproducible():
    spec = RhsSpec(RhsKind.RandomNormal, seed=7)
    assert np.array_equal(make_rhs(spec, 50), make_rhs(spec, 50))
    other = RhsSpec(RhsKind.RandomNormal, seed=8)
    assert not np.array_equal(make_rhs(spec, 50), make_rhs(other, 50))


def test_rhs_from_file(tmp_path):
    path = tmp_path / "b.txt"
    path.write_text("1.5\n-2\n3\n")
    spec = RhsSpec.parse(f"file:{path}")
    assert make_rhs(spec, 3).tolist() == [1.5, -2.0, 3.0]
    with pytest.raises(ShapeError):
        make_rhs(spec, 4)


def test_rhs_parse_errors():
    with pytest.raises(ConfigError):
        RhsSpec.parse("gaussian")
    with pytest.raises(ConfigError):
        RhsSpec.parse("file")
