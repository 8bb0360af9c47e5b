import numpy as np
import pytest

from gvmc import grassmann


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


def random_basis(rng, dim, n):
    kets = rng.standard_normal((dim, n)) + 1j * rng.standard_normal((dim, n))
    return grassmann.DenseSubspaceBasis(kets)


def random_hermitian(rng, dim):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (a + a.conj().T)


@pytest.fixture
def make_basis(rng):
    return lambda dim, n: random_basis(rng, dim, n)


@pytest.fixture
def make_hermitian(rng):
    return lambda dim: random_hermitian(rng, dim)
