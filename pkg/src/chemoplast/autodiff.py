"""Tapeless forward-mode automatic differentiation with dual numbers.

A :class:`Dual` carries a value array and, for every entry, a fixed-width
vector of directional derivatives (``der.shape == val.shape + (width,)``).
The elementwise helpers in this module (``log``, ``exp``, ``sqrt``, ``where``
...) accept plain floats/arrays as well, so kernels written against them run
unchanged on values or on duals.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual", "seed", "value", "derivs", "log", "exp", "sqrt", "asinh",
    "power", "where", "maximum", "clip", "abs_", "matmul", "transpose",
    "trace", "inv", "eye_like", "eigh", "sym_function", "frobenius_norm",
    "implicit_root", "tangent_via_ad", "strain_tangent_via_ad",
    "piola_tangent_via_ad",
]


class Dual:
    """Value plus first derivatives in ``width`` seed directions."""

    __slots__ = ("val", "der")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, val, der):
        self.val = np.asarray(val, dtype=float)
        self.der = np.asarray(der, dtype=float)
        if self.der.shape[:-1] != self.val.shape:
            self.der = np.broadcast_to(
                self.der, self.val.shape + self.der.shape[-1:]).copy()

    @property
    def width(self) -> int:
        return self.der.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    def __repr__(self):
        return f"Dual({self.val!r}, der={self.der!r})"

    def __getitem__(self, idx):
        tidx = idx if isinstance(idx, tuple) else (idx,)
        if any(i is Ellipsis for i in tidx):
            return Dual(self.val[idx], self.der[tidx + (slice(None),)])
        return Dual(self.val[idx], self.der[idx])

    def __len__(self):
        return len(self.val)

    # arithmetic -----------------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        other = np.asarray(other, dtype=float)
        return Dual(self.val + other, _expand(self.der, self.val + other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.der - other.der)
        other = np.asarray(other, dtype=float)
        return Dual(self.val - other, _expand(self.der, self.val - other))

    def __rsub__(self, other):
        other = np.asarray(other, dtype=float)
        return Dual(other - self.val, _expand(-self.der, other - self.val))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.der * other.val[..., None]
                        + other.der * self.val[..., None])
        other = np.asarray(other, dtype=float)
        return Dual(self.val * other, self.der * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.val / other.val
            return Dual(q, (self.der - other.der * q[..., None])
                        / other.val[..., None])
        other = np.asarray(other, dtype=float)
        return Dual(self.val / other, self.der / other[..., None])

    def __rtruediv__(self, other):
        other = np.asarray(other, dtype=float)
        q = other / self.val
        return Dual(q, -self.der * (q / self.val)[..., None])

    def __pow__(self, exponent):
        if isinstance(exponent, Dual):
            return exp(exponent * log(self))
        exponent = float(exponent)
        v = self.val**exponent
        dv = exponent * self.val ** (exponent - 1.0)
        return Dual(v, self.der * dv[..., None])

    # comparisons act on values only
    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)


def _expand(der, like):
    target = np.shape(like) + der.shape[-1:]
    if der.shape == target:
        return der
    return np.broadcast_to(der, target).copy()


def seed(values, width: int | None = None, offset: int = 0) -> Dual:
    """Seed every entry of ``values`` as an independent direction.

    With ``width`` larger than ``values.size`` the seeds occupy the slots
    ``offset .. offset + size``; the remaining directions start at zero.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    width = n + offset if width is None else width
    der = np.zeros((n, width))
    der[np.arange(n), offset + np.arange(n)] = 1.0
    return Dual(values, der.reshape(values.shape + (width,)))


def value(x):
    return x.val if isinstance(x, Dual) else x


def derivs(x, width: int):
    if isinstance(x, Dual):
        return x.der
    return np.zeros(np.shape(x) + (width,))


def _unary(x, f, df):
    if isinstance(x, Dual):
        return Dual(f(x.val), x.der * df(x.val)[..., None])
    return f(x)


def log(x):
    return _unary(x, np.log, lambda v: 1.0 / v)


def exp(x):
    return _unary(x, np.exp, np.exp)


def sqrt(x):
    return _unary(x, np.sqrt, lambda v: 0.5 / np.sqrt(v))


def asinh(x):
    return _unary(x, np.arcsinh, lambda v: 1.0 / np.sqrt(1.0 + v * v))


def abs_(x):
    return _unary(x, np.abs, np.sign)


def power(x, p: float):
    """``x**p`` for a constant exponent ``p`` (dual-aware)."""
    if isinstance(x, Dual):
        return x**p
    return np.power(x, p)


def where(mask, a, b):
    """Elementwise select that keeps the derivative of the chosen branch."""
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.where(mask, a, b)
    mask = np.asarray(mask, dtype=bool)
    va, vb = value(a), value(b)
    v = np.where(mask, va, vb)
    width = (a if isinstance(a, Dual) else b).width
    da = _expand(derivs(a, width), v)
    db = _expand(derivs(b, width), v)
    return Dual(v, np.where(mask[..., None], da, db))


def maximum(a, b):
    return where(value(a) >= value(b), a, b)


def clip(x, lo, hi):
    """Clamp values; clamped entries get zero derivative."""
    if isinstance(x, Dual):
        inside = (x.val >= lo) & (x.val <= hi)
        return Dual(np.clip(x.val, lo, hi), x.der * inside[..., None])
    return np.clip(x, lo, hi)


# small tensor algebra ------------------------------------------------------

def matmul(a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.matmul(a, b)
    va, vb = value(a), value(b)
    v = np.matmul(va, vb)
    der = 0.0
    if isinstance(a, Dual):
        der = der + np.einsum("...ijn,...jk->...ikn", a.der, vb)
    if isinstance(b, Dual):
        der = der + np.einsum("...ij,...jkn->...ikn", va, b.der)
    return Dual(v, der)


def transpose(a):
    if isinstance(a, Dual):
        return Dual(np.swapaxes(a.val, -1, -2), np.swapaxes(a.der, -2, -3))
    return np.swapaxes(a, -1, -2)


def trace(a):
    if isinstance(a, Dual):
        return Dual(np.trace(a.val, axis1=-2, axis2=-1),
                    np.trace(a.der, axis1=-3, axis2=-2))
    return np.trace(a, axis1=-2, axis2=-1)


def double_dot(a, b):
    """``a : b`` for (batched) second-order tensors."""
    return trace(matmul(transpose(a), b))


def frobenius_norm(a):
    return sqrt(double_dot(a, a))


def inv(a):
    """Matrix inverse (dual-aware, batched)."""
    va = np.linalg.inv(value(a))
    if not isinstance(a, Dual):
        return va
    return Dual(va, -np.einsum("...ij,...jkn,...kl->...iln", va, a.der, va))


def eye_like(a):
    return np.eye(np.shape(value(a))[-1])


def eigh(a, gap: float = 1e-6):
    """Eigen-decomposition of a symmetric matrix (dual-aware, batched).

    Eigenvalue derivatives are ``q_i . dA q_i``. Eigenvector derivatives use
    first-order perturbation theory; pairs closer than ``gap`` (relative to
    the spectral radius) are treated as degenerate and do not contribute, so
    the result stays finite.
    """
    if not isinstance(a, Dual):
        return np.linalg.eigh(a)
    w, q = np.linalg.eigh(a.val)
    dA = np.einsum("...ki,...kln,...lj->...ijn", q, a.der, q)
    dw = np.einsum("...iin->...in", dA)
    diff = w[..., None, :] - w[..., :, None]  # w_j - w_i
    scale = np.maximum(1.0, np.max(np.abs(w), axis=-1))[..., None, None]
    far = np.abs(diff) > gap * scale
    inv = np.where(far, 1.0 / np.where(far, diff, 1.0), 0.0)
    # dq_j = sum_i q_i (q_i.dA.q_j) / (w_j - w_i)
    dq = np.einsum("...ki,...ijn->...kjn", q, dA * inv[..., None])
    return Dual(w, dw), Dual(q, dq)


def sym_function(a, f, fprime, gap: float = 1e-10):
    """Isotropic matrix function ``Q f(L) Q^T`` of a symmetric matrix.

    Works on batches ``(..., 3, 3)``. Derivatives follow the Daleckii-Krein
    formula with divided differences ``(f(l_i) - f(l_j)) / (l_i - l_j)``;
    (nearly) equal eigenvalues use the derivative at their mean, which is
    exact for coincident pairs.
    """
    va = value(a)
    w, q = np.linalg.eigh(va)
    fw = f(w)
    qt = np.swapaxes(q, -1, -2)
    v = (q * fw[..., None, :]) @ qt
    if not isinstance(a, Dual):
        return v
    li, lj = w[..., :, None], w[..., None, :]
    scale = np.maximum(1.0, np.max(np.abs(w), axis=-1))[..., None, None]
    close = np.abs(li - lj) <= gap * scale
    denom = np.where(close, 1.0, li - lj)
    gamma = np.where(close, fprime(0.5 * (li + lj)),
                     (fw[..., :, None] - fw[..., None, :]) / denom)
    dA = np.einsum("...ki,...kln,...lj->...ijn", q, a.der, q)
    der = np.einsum("...ki,...ijn,...lj->...kln", q, gamma[..., None] * dA, q)
    return Dual(v, der)


def implicit_root(residual, root, inputs):
    """Attach derivatives to a converged root of ``residual(x, inputs) = 0``.

    ``root`` holds converged values (no derivatives). ``inputs`` may carry
    dual parts; the returned dual has ``dx = -(dr/dinputs) / (dr/dx)``,
    exact at the root regardless of how it was found.
    """
    root = np.asarray(value(root), dtype=float)
    r_in = residual(root, inputs)
    if not isinstance(r_in, Dual):
        return root
    probe = Dual(root, np.ones(root.shape + (1,)))
    r_x = residual(probe, _values_only(inputs))
    dr_dx = r_x.der[..., 0]
    return Dual(root, -r_in.der / dr_dx[..., None])


def _values_only(inputs):
    if isinstance(inputs, dict):
        return {k: value(v) for k, v in inputs.items()}
    if isinstance(inputs, (tuple, list)):
        return type(inputs)(value(v) for v in inputs)
    return value(inputs)


# tangents through the constitutive kernel ---------------------------------

_SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def _sym_seed(base, width: int = 6) -> Dual:
    """Dual symmetric matrix ``base + sum_k t_k B_k`` with basis ``B_k``."""
    der = np.zeros((3, 3, width))
    for k, (i, j) in enumerate(_SYM_PAIRS):
        der[i, j, k] = 1.0
        der[j, i, k] = 1.0
    return Dual(np.array(base, dtype=float), der)


def _sym_basis():
    basis = []
    for i, j in _SYM_PAIRS:
        b = np.zeros((3, 3))
        b[i, j] = b[j, i] = 1.0
        basis.append(b)
    return basis


def tangent_via_ad(F, c, plastic_old, params, tau_n=None, model="plastic"):
    """Consistent tangent ``dM/dE_tri`` of the stress projector by AD.

    The trial state is built from ``F``; the six independent components of
    the symmetric trial strain are then seeded and the stiffness map and the
    projector run entirely on duals. For the viscoplastic model the scalar
    increment is corrected through the implicit-function theorem at the
    converged root.
    """
    from . import constitutive as cm

    kin, _ = cm.trial_state(F, c, plastic_old, params)
    return strain_tangent_via_ad(kin.E_el, c, plastic_old, params,
                                 tau_n=tau_n, model=model)


def strain_tangent_via_ad(E_tri, c, plastic_old, params, tau_n=None,
                          model="plastic"):
    """As :func:`tangent_via_ad` but starting from a given trial strain."""
    from . import constitutive as cm

    E = _sym_seed(E_tri)
    M_tri = cm.stiffness_apply(E, params)
    M = cm.project(M_tri, c, plastic_old, params, tau_n=tau_n, model=model).M
    return cm.TangentBlock.from_directional(M.der, _sym_basis(), params)


def piola_tangent_via_ad(F, c, plastic_old, params, tau_n=None,
                         model="plastic", strain="hencky"):
    """``dP/dF`` (3x3x3x3) through kinematics, projector and Piola map."""
    from . import constitutive as cm

    F = np.asarray(F, dtype=float)
    Fd = Dual(F, np.eye(9).reshape(3, 3, 9))
    kin, M_tri = cm.trial_state(Fd, c, plastic_old, params, strain=strain)
    proj = cm.project(M_tri, c, plastic_old, params, tau_n=tau_n, model=model)
    P = cm.first_piola(kin, proj.M, strain=strain)
    return P.der.reshape(3, 3, 3, 3)
