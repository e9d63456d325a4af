#!/usr/bin/env python3

"""Pytest fixtures"""

import appdirs
import numpy as np
import pytest
import scipy.sparse

from mpgmres.core import CsrMatrix
from mpgmres.gen import generate
from mpgmres.types import StencilKind, StencilSpec


@pytest.fixture()
def config_dir(monkeypatch: pytest.MonkeyPatch, tmp_path):
    """Points the settings of mpgmres to an empty temporary directory."""

    def mock_config_dir(*_):
        return str(tmp_path)

    monkeypatch.setattr(appdirs, "user_config_dir", mock_config_dir)
    return tmp_path


@pytest.fixture(scope="session")
def laplace10() -> CsrMatrix:
    return generate(StencilSpec(StencilKind.Laplace2D, 10))


@pytest.fixture(scope="session")
def laplace30() -> CsrMatrix:
    return generate(StencilSpec(StencilKind.Laplace2D, 30))


def tridiag(n: int) -> CsrMatrix:
    """``tridiag(-1, 2, -1)`` of order `n`."""
    T = scipy.sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    return CsrMatrix.from_scipy(T)


def random_matrix(n: int, seed: int, shift: float = 0.0) -> CsrMatrix:
    """Dense nonsymmetric random matrix stored as CSR, ``+ shift * I``."""
    D = np.random.default_rng(seed).standard_normal((n, n)) + shift * np.eye(n)
    return CsrMatrix.from_dense(D)
