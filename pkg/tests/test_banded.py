import numpy as np
import pytest

from chemoplast.banded import BandMatrix, SingularMatrixError


def _random_band(rng, n, kl, ku):
    A = rng.normal(size=(n, n))
    i, j = np.indices((n, n))
    A[(j - i > ku) | (i - j > kl)] = 0.0
    A += n * np.eye(n)
    return A


@pytest.mark.parametrize("n,kl,ku", [(1, 0, 0), (7, 2, 1), (30, 5, 5), (12, 11, 11)])
def test_roundtrip_and_solve(n, kl, ku):
    rng = np.random.default_rng(n)
    A = _random_band(rng, n, kl, ku)
    B = BandMatrix.from_dense(A, kl, ku)
    np.testing.assert_array_equal(B.todense(), A)
    x = rng.normal(size=n)
    np.testing.assert_allclose(B @ x, A @ x, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(B.lu().solve(A @ x), x, rtol=1e-10)


def test_lu_reused_for_many_rhs():
    rng = np.random.default_rng(0)
    A = _random_band(rng, 20, 3, 3)
    lu = BandMatrix.from_dense(A, 3, 3).lu()
    X = rng.normal(size=(20, 4))
    np.testing.assert_allclose(lu.solve(A @ X), X, rtol=1e-10)


def test_singular_detected():
    with pytest.raises(SingularMatrixError):
        BandMatrix.from_dense(np.zeros((3, 3)), 1, 1).lu()


def test_axpby_and_identity_row():
    rng = np.random.default_rng(1)
    A = BandMatrix.from_dense(_random_band(rng, 6, 1, 1), 1, 1)
    B = BandMatrix.from_dense(_random_band(rng, 6, 1, 1), 1, 1)
    np.testing.assert_allclose(A.axpby(2.0, B, -1.0).todense(), 2 * A.todense() - B.todense())
    A.set_identity_row(3)
    row = A.todense()[3]
    np.testing.assert_array_equal(row, np.eye(6)[3])


def test_layout_mismatch():
    with pytest.raises(ValueError):
        BandMatrix(1, 1, 4).axpby(1.0, BandMatrix(2, 1, 4), 1.0)
