import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemoplast import autodiff as ad

finite = st.floats(0.1, 3.0)


@settings(max_examples=60, deadline=None)
@given(finite, finite)
def test_arithmetic_rules(a, b):
    x = ad.seed(np.array([a, b]))
    u, v = x[0], x[1]
    f = u * v + u / v - v**3 + 2.0 - u
    np.testing.assert_allclose(f.der, [v.val + 1 / v.val - 1, u.val - u.val / v.val**2 - 3 * v.val**2],
                               rtol=1e-12)
    g = ad.exp(ad.log(u) * 0.5) - ad.sqrt(u)
    np.testing.assert_allclose(g.der, 0.0, atol=1e-12)
    h = ad.power(u, 2.5)
    assert h.der[0] == pytest.approx(2.5 * a**1.5, rel=1e-12)


def test_reflected_operators():
    x = ad.seed(np.array([2.0]))
    np.testing.assert_allclose((3.0 - x).der, [[-1.0]])
    np.testing.assert_allclose((3.0 / x).der, [[-0.75]])
    np.testing.assert_allclose((np.array([1.0, 2.0]) * x[0]).der, [[1.0], [2.0]])


def test_where_and_maximum_pick_branch():
    x = ad.seed(np.array([-1.0, 2.0]))
    m = ad.maximum(x, 0.0)
    np.testing.assert_allclose(m.der, [[0.0, 0.0], [0.0, 1.0]])
    w = ad.where(np.array([True, False]), x * 3.0, x)
    np.testing.assert_allclose(w.der, [[3.0, 0.0], [0.0, 1.0]])


def test_matrix_helpers():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    Ad = ad.Dual(A, np.eye(9).reshape(3, 3, 9))
    inv = ad.inv(Ad)
    np.testing.assert_allclose(inv.val, np.linalg.inv(A), rtol=1e-12)
    # d(A^-1)/dA_ij = -A^-1 e_ij A^-1
    Ai = np.linalg.inv(A)
    E = np.zeros((3, 3))
    E[0, 1] = 1.0
    np.testing.assert_allclose(inv.der[..., 1], -Ai @ E @ Ai, rtol=1e-10, atol=1e-12)
    assert ad.trace(Ad).der.reshape(3, 3)[1, 1] == 1.0


@pytest.mark.parametrize("base", ["distinct", "repeated"])
def test_sym_function_derivative(base):
    rng = np.random.default_rng(1)
    if base == "distinct":
        A = np.diag([0.3, -0.2, 0.7])
        Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        A = Q @ A @ Q.T
    else:
        A = 0.4 * np.eye(3)
    B = rng.normal(size=(3, 3))
    B = B + B.T
    Ad = ad.Dual(A, B[..., None])
    out = ad.sym_function(Ad, np.exp, np.exp)

    def expm(S):
        w, V = np.linalg.eigh(S)
        return V @ np.diag(np.exp(w)) @ V.T

    h = 1e-6
    fd = (expm(A + h * B) - expm(A - h * B)) / (2 * h)
    np.testing.assert_allclose(out.der[..., 0], fd, rtol=1e-6, atol=1e-8)


def test_implicit_root():
    a = ad.seed(np.array([4.0, 9.0]))
    root = np.sqrt(a.val)
    x = ad.implicit_root(lambda x, inp: x * x - inp, root, a)
    np.testing.assert_allclose(x.val, [2.0, 3.0])
    np.testing.assert_allclose(np.diag(x.der), [0.25, 1.0 / 6.0], rtol=1e-14)


def test_implicit_root_without_duals_returns_values():
    out = ad.implicit_root(lambda x, inp: x - inp, np.array([1.0]), np.array([1.0]))
    assert not isinstance(out, ad.Dual)
