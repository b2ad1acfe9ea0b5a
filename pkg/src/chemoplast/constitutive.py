"""Integration-point material kernel.

Two layers live here:

* a general 3x3 tensor API (kinematics, strain measures, projectors,
  consistent tangents, stress measures) that accepts single tensors or
  batches ``(..., 3, 3)`` and runs on :class:`~chemoplast.autodiff.Dual`
  values as well;
* :func:`radial_response`, the same physics on principal values for the
  spherically symmetric case, vectorized over all quadrature points and
  returning derivatives with respect to ``(c, F_rr, F_tt)``.

Yield-type stresses carry the ``sqrt(2/3)`` tensile factor already (see
:mod:`chemoplast.params`); deviator norms are Frobenius norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import chemistry
from .params import DimensionlessParams

EIGEN_FLOOR = 1e-14
_SQRT6 = np.sqrt(6.0)
_SQRT23 = np.sqrt(2.0 / 3.0)
_I3 = np.eye(3)

MODELS = ("elastic", "plastic", "viscoplastic")
STRAINS = ("hencky", "gsv")


class KinematicError(ValueError):
    """Inverted or degenerate deformation (non-positive stretch)."""


class ProjectorError(RuntimeError):
    """Scalar viscoplastic solve failed to converge."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


# ---------------------------------------------------------------- state types

@dataclass
class PlasticState:
    """Plastic deformation gradient and accumulated equivalent plastic strain."""

    F_pl: np.ndarray
    eps_pl_v: np.ndarray | float

    @classmethod
    def virgin(cls, shape=()):
        F = np.broadcast_to(_I3, tuple(shape) + (3, 3)).copy()
        return cls(F, np.zeros(shape) if shape else 0.0)


@dataclass
class KinematicState:
    """Trial kinematics at an integration point.

    ``F_el = F F_pl^-1 / lambda_ch``; ``E_el`` is the chosen strain measure of
    ``C_el = F_el^T F_el``.
    """

    F: object
    lambda_ch: object
    F_el: object
    E_el: object
    F_pl: np.ndarray
    C_el: object
    strain: str = "hencky"

    @property
    def J(self):
        return np.linalg.det(ad.value(self.F))

    @property
    def J_ch(self):
        return ad.value(self.lambda_ch) ** 3

    @property
    def J_pl(self):
        return np.linalg.det(self.F_pl)

    @property
    def J_el(self):
        return np.linalg.det(ad.value(self.F_el))

    @property
    def F_rev(self):
        """Reversible part ``F_ch F_el``."""
        return _scale(self.F_el, self.lambda_ch)


@dataclass
class ProjectedStress:
    """Result of a stress projection."""

    M: object
    M_dev_norm: object
    eps_pl_v_new: object
    N_pl: object
    plastic_active: np.ndarray | bool
    delta_eps: object


# ------------------------------------------------------------------ helpers

def _scale(A, s):
    """``s * A`` for a (batched) scalar ``s`` and matrix ``A``."""
    if isinstance(s, ad.Dual):
        return s[..., None, None] * A
    return np.asarray(s)[..., None, None] * A


def deviator(M):
    return M - _scale(_I3, ad.trace(M) / 3.0)


def dev_norm(M):
    return ad.frobenius_norm(deviator(M))


def _outer(a, b):
    return np.einsum("...ij,...kl->...ijkl", a, b)


def _identity_tensors():
    d = _I3
    I4 = 0.5 * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
    II = np.einsum("ij,kl->ijkl", d, d)
    return I4, II, I4 - II / 3.0


I4_SYM, I_VOL, I_DEV = _identity_tensors()


# --------------------------------------------------------------- kinematics

def chemical_stretch(c, params: DimensionlessParams):
    """``lambda_ch = (1 + v c)^(1/3)``."""
    return ad.power(1.0 + params.v_pmv_tilde * c, 1.0 / 3.0)


def _check_spd(C):
    w = np.linalg.eigvalsh(ad.value(C))
    if np.any(~np.isfinite(w)) or np.any(w <= 0.0):
        raise KinematicError("elastic right Cauchy-Green tensor is not positive definite")


def hencky_strain(C_el):
    """Logarithmic strain ``1/2 ln C_el`` via eigendecomposition."""
    _check_spd(C_el)
    return ad.sym_function(C_el, lambda w: 0.5 * np.log(np.maximum(w, EIGEN_FLOOR)),
                           lambda w: 0.5 / w)


def gsv_strain(C_el):
    """Green-St-Venant strain ``1/2 (C_el - I)``."""
    return 0.5 * (C_el - _I3)


def stiffness_apply(E, params: DimensionlessParams):
    """Isotropic stiffness ``lambda tr(E) I + 2 G E``."""
    return _scale(_I3, params.lambda_lame * ad.trace(E)) + 2.0 * params.G_shear * E


def sym_exp(A):
    """Exponential of a symmetric matrix (batched)."""
    return ad.sym_function(A, np.exp, np.exp)


def trial_state(F, c, plastic_old: PlasticState, params: DimensionlessParams,
                strain: str = "hencky"):
    """Trial kinematics and trial Mandel stress for frozen plastic history.

    Returns
    -------
    kin : KinematicState
    M_tri : array or Dual
        ``C[E_el]`` for the Hencky measure; ``C_el C[E_el]`` for the GSV
        measure (the Mandel stress of the GSV energy).
    """
    if strain not in STRAINS:
        raise ValueError(f"unknown strain measure {strain!r}")
    if np.any(np.linalg.det(ad.value(F)) <= 0.0):
        raise KinematicError("det F must be positive")
    lam = chemical_stretch(c, params)
    F_pl = np.asarray(plastic_old.F_pl, dtype=float)
    F_el = _scale(ad.matmul(F, np.linalg.inv(F_pl)), 1.0 / lam)
    C_el = ad.matmul(ad.transpose(F_el), F_el)
    if strain == "hencky":
        E = hencky_strain(C_el)
        M_tri = stiffness_apply(E, params)
    else:
        _check_spd(C_el)
        E = gsv_strain(C_el)
        M_tri = ad.matmul(C_el, stiffness_apply(E, params))
    return KinematicState(F, lam, F_el, E, F_pl, C_el, strain), M_tri


# ------------------------------------------------------------- yield / flow

def initial_yield(c, params: DimensionlessParams):
    """Concentration-dependent yield radius ``sigma_Y(c)`` (no hardening)."""
    return params.sigma_Y_min_tilde * c + (1.0 - c) * params.sigma_Y_max_tilde


def yield_stress(c, eps_pl_v, params: DimensionlessParams):
    """``sigma_F = sigma_Y(c) + gamma_iso eps_pl_v``."""
    return initial_yield(c, params) + params.gamma_iso_tilde * eps_pl_v


def plastic_increment(snorm, sigma_F, params: DimensionlessParams):
    """Radial-return increment ``(|s| - sigma_F) / (2G + gamma)`` (unclipped)."""
    return (snorm - sigma_F) / (2.0 * params.G_shear + params.gamma_iso_tilde)


def viscoplastic_residual(delta_eps, snorm, sigma_Y, tau, params: DimensionlessParams):
    """Overstress residual multiplied by the step size ``tau``.

    ``tau * eps_dot_0 * ((|s| - 2G de - sigma_Y) / sigma*)^beta - de``
    """
    x = (snorm - 2.0 * params.G_shear * delta_eps - sigma_Y) / params.sigma_Y_star_tilde
    return tau * params.eps_dot_0_tilde * ad.power(x, params.beta) - delta_eps


def solve_viscoplastic_increment(snorm, sigma_Y, tau, params: DimensionlessParams,
                                 tol: float = 1e-12, max_iter: int = 100):
    """Vectorized safeguarded Newton for the viscoplastic increment.

    Works on the normalized overstress ``x``; the residual in ``x`` is convex
    and increasing, so Newton started from an upper bound converges
    monotonically. Bisection takes over if an iterate leaves the bracket.
    Entries with ``snorm <= sigma_Y`` return zero. ``tol`` is relative to
    the two balancing terms of the residual, so tiny overstresses still
    resolve their (tiny) increments.

    Returns
    -------
    numpy.ndarray
        Increments, same shape as the broadcast inputs.
    """
    snorm, sigma_Y, tau = np.broadcast_arrays(
        np.asarray(snorm, float), np.asarray(sigma_Y, float), np.asarray(tau, float))
    out = np.zeros(snorm.shape)
    act = snorm > sigma_Y
    if not np.any(act):
        return out
    G, ss, beta = params.G_shear, params.sigma_Y_star_tilde, params.beta
    x0 = (snorm[act] - sigma_Y[act]) / ss
    scale = tau[act] * params.eps_dot_0_tilde
    k = ss / (2.0 * G * scale)
    # h(x) = x^beta - k (x0 - x); root in (0, x0], h(x) <= x^beta - k(x0-x)
    lo = np.zeros_like(x0)
    hi = np.minimum(x0, (k * x0) ** (1.0 / beta))
    x = hi.copy()
    done = np.zeros(x0.shape, dtype=bool)
    for _ in range(max_iter):
        xb = x**beta
        h = xb - k * (x0 - x)
        done = np.abs(h) <= tol * (xb + k * (x0 - x))
        if np.all(done):
            break
        lo = np.where(h < 0.0, x, lo)
        hi = np.where(h > 0.0, x, hi)
        dh = beta * xb / np.maximum(x, 1e-300) + k
        xn = x - h / dh
        bad = ~((xn > lo) & (xn < hi))
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        stalled = np.abs(xn - x) <= 4.0 * np.finfo(float).eps * np.maximum(x0, 1e-300)
        x = np.where(done, x, xn)
        done |= stalled
        if np.all(done):
            break
    else:
        if not np.all(done):
            i = int(np.argmax(~done))
            raise ProjectorError("viscoplastic increment did not converge",
                                 bracket=(float(lo[i]), float(hi[i])))
    out[act] = (x0 - x) * ss / (2.0 * G)
    return out


def _viscoplastic_delta(snorm, sy, tau, params):
    """Increment with implicit-function derivatives when inputs are duals."""
    sn_v, sy_v = ad.value(snorm), ad.value(sy)
    de = solve_viscoplastic_increment(sn_v, sy_v, tau, params)
    act = np.asarray(sn_v > sy_v)
    if not (isinstance(snorm, ad.Dual) or isinstance(sy, ad.Dual)):
        return de, act
    if not np.any(act):
        return ad.where(act, snorm * 0.0, 0.0), act
    with np.errstate(invalid="ignore", divide="ignore"):
        sn_safe = ad.where(act, snorm, sy + 1.0)
        de_d = ad.implicit_root(
            lambda d, inp: viscoplastic_residual(d, inp[0], inp[1], tau, params),
            np.where(act, de, 0.0), (sn_safe, sy))
    return ad.where(act, de_d, 0.0), act


def _finish_projection(M_tri, s, snorm, de, active, eps_old, eps_add, params):
    G = params.G_shear
    denom = ad.where(active, snorm, 1.0)
    n = _scale(s, 1.0 / denom)
    M = M_tri - _scale(n, 2.0 * G * de)
    N = ad.where(np.asarray(active)[..., None, None], n, 0.0 * ad.value(s))
    return ProjectedStress(M=M, M_dev_norm=snorm - 2.0 * G * de,
                           eps_pl_v_new=eps_old + eps_add, N_pl=N,
                           plastic_active=active, delta_eps=de)


def project_rate_independent(M_tri, c, plastic_old: PlasticState,
                             params: DimensionlessParams) -> ProjectedStress:
    """Radial return onto the hardening von Mises cylinder."""
    s = deviator(M_tri)
    snorm = ad.frobenius_norm(s)
    eps_n = plastic_old.eps_pl_v
    sF = yield_stress(c, eps_n, params)
    active = np.asarray(ad.value(snorm) > ad.value(sF))
    de = ad.where(active, plastic_increment(snorm, sF, params), 0.0 * ad.value(snorm))
    if np.any(ad.value(de) < 0.0):
        raise ProjectorError("negative plastic increment on the plastic branch")
    return _finish_projection(M_tri, s, snorm, de, active, eps_n, de, params)


def project_viscoplastic(M_tri, c, plastic_old: PlasticState, tau_n,
                         params: DimensionlessParams) -> ProjectedStress:
    """Overstress projection with the power-law flow rule."""
    if np.any(np.asarray(tau_n) <= 0.0):
        raise ValueError("tau_n must be positive")
    s = deviator(M_tri)
    snorm = ad.frobenius_norm(s)
    sy = initial_yield(c, params)
    de, active = _viscoplastic_delta(snorm, sy, tau_n, params)
    return _finish_projection(M_tri, s, snorm, de, active,
                              plastic_old.eps_pl_v, de, params)


def project(M_tri, c, plastic_old: PlasticState, params: DimensionlessParams,
            tau_n=None, model: str = "plastic") -> ProjectedStress:
    """Dispatch to the projector of ``model``."""
    if model == "elastic":
        s = deviator(M_tri)
        snorm = ad.frobenius_norm(s)
        zero = np.zeros(np.shape(ad.value(snorm)))
        return ProjectedStress(M_tri, snorm, plastic_old.eps_pl_v,
                               np.zeros(np.shape(ad.value(M_tri))),
                               np.zeros(zero.shape, dtype=bool), zero)
    if model == "plastic":
        return project_rate_independent(M_tri, c, plastic_old, params)
    if model == "viscoplastic":
        if tau_n is None:
            raise ValueError("viscoplastic projection needs tau_n")
        return project_viscoplastic(M_tri, c, plastic_old, tau_n, params)
    raise ValueError(f"unknown model {model!r}")


def update_plastic_flow(plastic_old: PlasticState, proj: ProjectedStress) -> PlasticState:
    """``F_pl <- exp(de N) F_pl`` and store the new equivalent plastic strain."""
    de = np.asarray(ad.value(proj.delta_eps), dtype=float)
    N = np.asarray(ad.value(proj.N_pl), dtype=float)
    incr = sym_exp(de[..., None, None] * N)
    F_new = incr @ np.asarray(plastic_old.F_pl)
    return PlasticState(F_new, np.asarray(ad.value(proj.eps_pl_v_new), dtype=float)
                        if np.ndim(de) else float(ad.value(proj.eps_pl_v_new)))


# ------------------------------------------------------------------ tangents

@dataclass
class TangentBlock:
    """Fourth-order tangent ``dM/dE`` acting on symmetric strains.

    ``C`` is stored with both minor symmetries; ``C_G = 2G I_dev`` and
    ``C_K = K I (x) I`` are kept for reference.
    """

    C: np.ndarray
    C_G: np.ndarray
    C_K: np.ndarray

    @classmethod
    def elastic(cls, params: DimensionlessParams) -> "TangentBlock":
        C_G = 2.0 * params.G_shear * I_DEV
        C_K = params.K_bulk * I_VOL
        return cls(C_G + C_K, C_G, C_K)

    @classmethod
    def from_directional(cls, dM, basis, params) -> "TangentBlock":
        """Rebuild from directional derivatives ``dM[..., k] = C : basis[k]``."""
        base = cls.elastic(params)
        C = np.zeros((3, 3, 3, 3))
        for k, B in enumerate(basis):
            i, j = np.argwhere(B > 0)[0]
            if i == j:
                C[:, :, i, i] = dM[..., k]
            else:
                C[:, :, i, j] = C[:, :, j, i] = 0.5 * dM[..., k]
        return cls(C, base.C_G, base.C_K)

    def apply(self, E):
        return np.einsum("ijkl,kl->ij", self.C, E)

    def voigt(self) -> np.ndarray:
        """6x6 matrix acting on ``(E11, E22, E33, 2E12, 2E13, 2E23)``."""
        pairs = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
        return np.array([[self.C[i, j, k, l] for k, l in pairs] for i, j in pairs])


def _nn(M_tri):
    s = deviator(np.asarray(M_tri, dtype=float))
    snorm = float(np.linalg.norm(s))
    n = s / snorm if snorm > 0.0 else np.zeros((3, 3))
    return s, snorm, n


def tangent_rate_independent(M_tri, c, plastic_old: PlasticState,
                             params: DimensionlessParams) -> TangentBlock:
    """Consistent tangent of the rate-independent projector.

    On the plastic branch
    ``a C_G + C_K + b sigma_Y / |s| (C_G - 2G n (x) n)`` with
    ``a = gamma / (2G + gamma)``, ``kappa = 1 - 2G eps_n / sigma_Y`` and
    ``b = 1 - a kappa``.
    """
    el = TangentBlock.elastic(params)
    _, snorm, n = _nn(M_tri)
    eps_n = float(plastic_old.eps_pl_v)
    if snorm <= float(yield_stress(c, eps_n, params)):
        return el
    G, gam = params.G_shear, params.gamma_iso_tilde
    sy = float(initial_yield(c, params))
    a = gam / (2.0 * G + gam)
    kappa = 1.0 - 2.0 * G * eps_n / sy
    b = 1.0 - a * kappa
    C = a * el.C_G + el.C_K + b * sy / snorm * (el.C_G - 2.0 * G * _outer(n, n))
    return TangentBlock(C, el.C_G, el.C_K)


def tangent_viscoplastic(M_tri, c, delta_eps, tau_n, params: DimensionlessParams,
                         consistent: bool = True) -> TangentBlock:
    """Tangent of the viscoplastic projector.

    With ``consistent=False`` the increment is held fixed and the result is
    ``C_G + C_K - 2G de / |s| (C_G - 2G n (x) n)``. The default also
    linearizes the increment through the flow rule, adding
    ``-4G^2 A / (2G A + 1/tau) n (x) n`` with ``A`` the slope of the rate law.
    """
    el = TangentBlock.elastic(params)
    de = float(delta_eps)
    if de <= 0.0:
        return el
    G = params.G_shear
    _, snorm, n = _nn(M_tri)
    nn = _outer(n, n)
    C = el.C - 2.0 * G * de / snorm * (el.C_G - 2.0 * G * nn)
    if consistent:
        A = _rate_slope(snorm, float(initial_yield(c, params)), de, params)
        C = C - 4.0 * G * G * A / (2.0 * G * A + 1.0 / tau_n) * nn
    return TangentBlock(C, el.C_G, el.C_K)


def _rate_slope(snorm, sy, de, params):
    """``d(rate)/d(overstress) = eps_dot_0 beta x^(beta-1) / sigma*``."""
    x = np.maximum((snorm - 2.0 * params.G_shear * de - sy) / params.sigma_Y_star_tilde, 0.0)
    return params.eps_dot_0_tilde * params.beta * x ** (params.beta - 1.0) / params.sigma_Y_star_tilde


# ------------------------------------------------------------ stress measures

def first_piola(kin: KinematicState, M_projected, strain: str | None = None):
    """First Piola-Kirchhoff stress from the projected Mandel stress.

    ``P = lambda^-2 F F_pl^-1 C_el^-1 M F_pl^-T``, which simplifies to
    ``F^-T F_pl^T M F_pl^-T`` and holds for both strain measures.
    """
    F_pl = kin.F_pl
    if np.any(np.abs(np.linalg.det(F_pl)) < 1e-300):
        raise KinematicError("singular plastic deformation gradient")
    FinvT = ad.transpose(ad.inv(kin.F))
    inner = ad.matmul(ad.matmul(np.swapaxes(F_pl, -1, -2), M_projected),
                      np.swapaxes(np.linalg.inv(F_pl), -1, -2))
    return ad.matmul(FinvT, inner)


def cauchy_stress(P, F):
    """``sigma = P F^T / det F``."""
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if np.any(J <= 0.0):
        raise KinematicError("det F must be positive")
    return (np.asarray(P) @ np.swapaxes(F, -1, -2)) / J[..., None, None]


def d_psi_el_dc(kin: KinematicState, M_projected, c, params: DimensionlessParams):
    """Mechanical part of the chemical potential, ``-(v/3) lambda^-3 tr M``."""
    return -(params.v_pmv_tilde / 3.0) * ad.trace(M_projected) / (1.0 + params.v_pmv_tilde * c)


# ------------------------------------------------- principal-value 1D kernel

@dataclass
class RadialResponse:
    """Pointwise response for the spherically symmetric case.

    Derivative arrays have a trailing axis over ``(c, F_rr, F_tt)``.
    """

    mu_loc: np.ndarray     # -U~_OCV(c) + mechanical part
    mob: np.ndarray
    P_r: np.ndarray
    P_t: np.ndarray
    M_r: np.ndarray
    M_t: np.ndarray
    delta_eps: np.ndarray
    Lr_new: np.ndarray
    eps_new: np.ndarray
    active: np.ndarray
    d_mu: np.ndarray | None = None
    d_mob: np.ndarray | None = None
    d_Pr: np.ndarray | None = None
    d_Pt: np.ndarray | None = None


def _gsv_mandel(Fr, Ft, Lr, w, params):
    """Principal GSV Mandel stresses ``C_el S`` and their parts.

    ``w = lambda_ch**-2``; ``Lr`` is the radial plastic log-stretch.
    """
    lamL, G = params.lambda_lame, params.G_shear
    xr = Fr * Fr * ad.exp(-2.0 * Lr) * w
    xt = Ft * Ft * ad.exp(Lr) * w
    Er, Et = 0.5 * (xr - 1.0), 0.5 * (xt - 1.0)
    trE = Er + 2.0 * Et
    Sr = lamL * trE + 2.0 * G * Er
    St = lamL * trE + 2.0 * G * Et
    return xr * Sr, xt * St, xr, xt, Sr, St, trE


def _gsv_dmu_el_dc(xr, xt, Sr, St, lam3, params):
    # partial of the mechanical potential in c at fixed F and F_pl
    v, lamL, G = params.v_pmv_tilde, params.lambda_lame, params.G_shear
    g = -(2.0 / 3.0) * v / lam3
    dxr, dxt = g * xr, g * xt
    dtr = 0.5 * (dxr + 2.0 * dxt)
    dSr = lamL * dtr + G * dxr
    dSt = lamL * dtr + G * dxt
    dtrM = dxr * Sr + xr * dSr + 2.0 * (dxt * St + xt * dSt)
    trM = xr * Sr + 2.0 * xt * St
    return (v * v / 3.0) * trM / (lam3 * lam3) - (v / 3.0) * dtrM / lam3


def _gsv_return_residual(de, inp, params, model, tau):
    """Yield (or overstress) residual of the exact GSV return along ``nr``."""
    Fr, Ft, Lr, w, nr, sref = inp
    Mr, Mt = _gsv_mandel(Fr, Ft, Lr + nr * de, w, params)[:2]
    sn = (_SQRT23 * _SQRT6 / 2.0) * nr * (Mr - Mt)
    if model == "plastic":
        return sn - sref - params.gamma_iso_tilde * de
    x = ad.maximum((sn - sref) / params.sigma_Y_star_tilde, 0.0)
    return tau * params.eps_dot_0_tilde * ad.power(x, params.beta) - de


def _gsv_return_slope(de, inp, params, model, tau):
    Fr, Ft, Lr, w, nr, sref = inp
    L = Lr + nr * de
    Mr, Mt, xr, xt, Sr, St, _ = _gsv_mandel(Fr, Ft, L, w, params)
    lamL, G = params.lambda_lame, params.G_shear
    dtr = xt - xr
    dMr = -2.0 * xr * Sr + xr * (lamL * dtr - 2.0 * G * xr)
    dMt = xt * St + xt * (lamL * dtr + G * xt)
    dsn = (2.0 / 3.0) * (dMr - dMt)
    if model == "plastic":
        return dsn - params.gamma_iso_tilde
    sn = (_SQRT23 * _SQRT6 / 2.0) * nr * (Mr - Mt)
    x = np.maximum((sn - sref) / params.sigma_Y_star_tilde, 0.0)
    k = tau * params.eps_dot_0_tilde
    return k * params.beta * x ** (params.beta - 1.0) * dsn / params.sigma_Y_star_tilde - 1.0


def solve_gsv_return(inp, guess, params, model, tau, tol=1e-12, max_iter=100):
    """Increment of the exact return for the GSV law at active points.

    The residual decreases in the increment, so a bracket ``[0, hi]`` is
    grown from ``guess`` and a Newton iteration safeguarded by bisection
    runs inside it.
    """
    f = lambda d: _gsv_return_residual(d, inp, params, model, tau)
    guess = np.asarray(guess, dtype=float)
    lo = np.zeros_like(guess)
    hi = np.maximum(2.0 * guess, 1e-12)
    for _ in range(200):
        up = f(hi) > 0.0
        if not np.any(up):
            break
        lo = np.where(up, hi, lo)
        hi = np.where(up, 2.0 * hi, hi)
    else:
        raise ProjectorError("GSV return: no bracket found")
    x = np.clip(guess, lo, hi)
    for _ in range(max_iter):
        r = f(x)
        if np.all(np.abs(r) < tol):
            return x
        lo = np.where(r > 0.0, x, lo)
        hi = np.where(r < 0.0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - r / _gsv_return_slope(x, inp, params, model, tau)
        bad = ~((xn > lo) & (xn < hi))
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        if np.all(np.abs(xn - x) <= 4.0 * np.finfo(float).eps * np.maximum(hi, 1e-300)):
            return xn
        x = np.where(np.abs(r) < tol, x, xn)
    i = int(np.argmax(np.abs(f(x))))
    raise ProjectorError("GSV return did not converge", bracket=(float(lo[i]), float(hi[i])))


def _gsv_delta(Fr, Ft, Lr, w, nr, sref, de_guess, active, params, model, tau):
    """Exact GSV increment with implicit-function derivatives for duals."""
    zero = 0.0 * ad.value(de_guess)
    if not np.any(active):
        return zero if not isinstance(de_guess, ad.Dual) else de_guess * 0.0
    a = np.asarray(active)
    vals = [np.broadcast_to(ad.value(z), a.shape)[a] for z in (Fr, Ft, Lr, w, nr, sref)]
    guess = np.broadcast_to(ad.value(de_guess), a.shape)[a]
    de = np.zeros(a.shape)
    de[a] = solve_gsv_return(tuple(vals), guess, params, model, tau)
    inputs = (Fr, Ft, Lr, w, nr, sref)
    if not any(isinstance(z, ad.Dual) for z in inputs):
        return de
    de_d = ad.implicit_root(
        lambda d, inp: _gsv_return_residual(d, inp, params, model, tau), de, inputs)
    return ad.where(a, de_d, zero)


def _radial_core(c, Fr, Ft, Lr, eps, params, model, tau, strain):
    v = params.v_pmv_tilde
    lamL, G, K = params.lambda_lame, params.G_shear, params.K_bulk
    s_ocv = params.ocv_scale
    lam3 = 1.0 + v * c
    if strain == "hencky":
        log_lam = ad.log(lam3) / 3.0
        Er = ad.log(Fr) - log_lam - Lr
        Et = ad.log(Ft) - log_lam + 0.5 * Lr
        trE = Er + 2.0 * Et
        Mr = lamL * trE + 2.0 * G * Er
        Mt = lamL * trE + 2.0 * G * Et
    else:
        w = ad.power(lam3, -2.0 / 3.0)
        Mr, Mt, _, _, _, _, trE = _gsv_mandel(Fr, Ft, Lr, w, params)
    d = Mr - Mt
    snorm = _SQRT23 * ad.abs_(d)
    sgn = np.where(ad.value(d) >= 0.0, 1.0, -1.0)
    nr, nt = 2.0 * sgn / _SQRT6, -sgn / _SQRT6
    sy = initial_yield(c, params)
    zero = np.zeros(np.shape(ad.value(c)))
    sref = sy
    if model == "elastic":
        de, active = zero, np.zeros(zero.shape, dtype=bool)
    elif model == "plastic":
        sref = sy + params.gamma_iso_tilde * eps
        active = np.asarray(ad.value(snorm) > ad.value(sref))
        de = ad.where(active, plastic_increment(snorm, sref, params), zero)
    elif model == "viscoplastic":
        de, active = _viscoplastic_delta(snorm, sy, tau, params)
    else:
        raise ValueError(f"unknown model {model!r}")
    if strain == "hencky":
        Mr_p = Mr - 2.0 * G * nr * de
        Mt_p = Mt - 2.0 * G * nt * de
        dmu_el_dc = v * v * K * (1.0 + trE) / (lam3 * lam3)
    else:
        # the linear return is only a first guess for the GSV law
        if model != "elastic":
            de = _gsv_delta(Fr, Ft, Lr, w, nr, sref, de, active, params, model, tau)
        Mr_p, Mt_p, xr, xt, Sr, St, _ = _gsv_mandel(Fr, Ft, Lr + nr * de, w, params)
        dmu_el_dc = _gsv_dmu_el_dc(xr, xt, Sr, St, lam3, params)
    trM = Mr_p + 2.0 * Mt_p
    mu_el = -(v / 3.0) * trM / lam3
    cc = chemistry.clamp_concentration(c)
    mu_loc = -s_ocv * chemistry._ocv_raw(cc) + mu_el
    dmu_dc = -s_ocv * chemistry._docv_raw(cc) + dmu_el_dc
    mob = params.Fo / ad.maximum(dmu_dc, chemistry.EPS_MOBILITY)
    return dict(mu_loc=mu_loc, mob=mob, P_r=Mr_p / Fr, P_t=Mt_p / Ft,
                M_r=Mr_p, M_t=Mt_p, de=de, active=active, nr=nr, sgn=sgn,
                snorm=snorm, sy=sy, trE=trE, dmu_dc=dmu_dc, lam3=lam3)


def radial_response(c, Fr, Ft, Lr, eps, params: DimensionlessParams,
                    model: str = "plastic", tau=None, strain: str = "hencky",
                    derivatives: str | None = None) -> RadialResponse:
    """Evaluate the local kernel at all quadrature points at once.

    Parameters
    ----------
    c, Fr, Ft : numpy.ndarray
        Concentration and principal stretches ``1 + u'`` and ``1 + u/r``.
    Lr, eps : numpy.ndarray
        Committed history: radial entry of ``ln F_pl`` and the equivalent
        plastic strain.
    derivatives : {None, "analytic", "ad"}
        How to obtain derivatives with respect to ``(c, Fr, Ft)``.
    """
    if model == "viscoplastic" and tau is None:
        raise ValueError("viscoplastic model needs tau")
    c, Fr, Ft, Lr, eps = (np.asarray(a, dtype=float) for a in (c, Fr, Ft, Lr, eps))
    if np.any(Fr <= 0.0) or np.any(Ft <= 0.0):
        bad = int(np.argmax((Fr <= 0.0) | (Ft <= 0.0)))
        raise KinematicError(f"non-positive stretch at point {bad}")
    if derivatives == "ad":
        base = np.zeros(c.shape + (3,))
        sc = base.copy(); sc[..., 0] = 1.0
        sr = base.copy(); sr[..., 1] = 1.0
        st = base.copy(); st[..., 2] = 1.0
        out = _radial_core(ad.Dual(c, sc), ad.Dual(Fr, sr), ad.Dual(Ft, st),
                           Lr, eps, params, model, tau, strain)
        de = out["de"]
        dv = ad.value(de)
        res = RadialResponse(
            mu_loc=out["mu_loc"].val, mob=out["mob"].val, P_r=out["P_r"].val,
            P_t=out["P_t"].val, M_r=out["M_r"].val, M_t=out["M_t"].val,
            delta_eps=np.asarray(dv, dtype=float), Lr_new=Lr + out["nr"] * dv,
            eps_new=eps + dv, active=out["active"],
            d_mu=out["mu_loc"].der, d_mob=out["mob"].der,
            d_Pr=out["P_r"].der, d_Pt=out["P_t"].der)
        return res
    out = _radial_core(c, Fr, Ft, Lr, eps, params, model, tau, strain)
    de = np.asarray(out["de"], dtype=float)
    res = RadialResponse(
        mu_loc=out["mu_loc"], mob=out["mob"], P_r=out["P_r"], P_t=out["P_t"],
        M_r=out["M_r"], M_t=out["M_t"], delta_eps=de,
        Lr_new=Lr + out["nr"] * de, eps_new=eps + de, active=out["active"])
    if derivatives == "analytic":
        if strain != "hencky":
            raise NotImplementedError("analytic tangents are implemented for the Hencky strain only")
        _radial_analytic_derivatives(res, out, c, Fr, Ft, params, model, tau)
    elif derivatives is not None:
        raise ValueError(f"unknown derivative mode {derivatives!r}")
    return res


def _radial_analytic_derivatives(res, out, c, Fr, Ft, params, model, tau):
    v, lamL, G, K = params.v_pmv_tilde, params.lambda_lame, params.G_shear, params.K_bulk
    lam3, trE, de, active = out["lam3"], out["trE"], res.delta_eps, out["active"]
    snorm, sy, sgn = out["snorm"], out["sy"], out["sgn"]
    npt = c.shape
    n = np.stack([2.0 * sgn, -sgn, -sgn], axis=-1) / _SQRT6
    # principal 3x3 tangent dM/dE and dM/dc at fixed E
    C = lamL * np.ones((3, 3)) + 2.0 * G * np.eye(3)
    T = np.broadcast_to(C, npt + (3, 3)).copy()
    nn = n[..., :, None] * n[..., None, :]
    Pdev = np.eye(3) - np.ones((3, 3)) / 3.0
    dsy = params.sigma_Y_min_tilde - params.sigma_Y_max_tilde
    c1 = np.zeros(npt)
    kc = np.zeros(npt)
    if model == "plastic":
        h = 2.0 * G + params.gamma_iso_tilde
        c1 = np.where(active, 4.0 * G * G / h, 0.0)
        kc = np.where(active, 2.0 * G / h, 0.0)
    elif model == "viscoplastic":
        A = np.where(active, _rate_slope(snorm, sy, de, params), 0.0)
        with np.errstate(divide="ignore"):
            denom = 2.0 * G * A + 1.0 / tau
        c1 = np.where(active, 4.0 * G * G * A / denom, 0.0)
        kc = np.where(active, 2.0 * G * A / denom, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        c2 = np.where(de > 0.0, 4.0 * G * G * de / np.where(snorm > 0, snorm, 1.0), 0.0)
    T -= c1[..., None, None] * nn + c2[..., None, None] * (Pdev - nn)
    e_c = -(v / 3.0) / lam3
    dMr = np.stack([3.0 * K * e_c + kc * dsy * n[..., 0],
                    T[..., 0, 0] / Fr, (T[..., 0, 1] + T[..., 0, 2]) / Ft], axis=-1)
    dMt = np.stack([3.0 * K * e_c + kc * dsy * n[..., 1],
                    T[..., 1, 0] / Fr, (T[..., 1, 1] + T[..., 1, 2]) / Ft], axis=-1)
    res.d_Pr = dMr / Fr[..., None]
    res.d_Pr[..., 1] -= res.M_r / (Fr * Fr)
    res.d_Pt = dMt / Ft[..., None]
    res.d_Pt[..., 2] -= res.M_t / (Ft * Ft)
    # chemical potential and mobility
    s_ocv = params.ocv_scale
    lo, hi = chemistry.C_CLAMP
    inside = (c >= lo) & (c <= hi)
    cc = np.clip(c, lo, hi)
    res.d_mu = np.stack([v * v * K * (1.0 + trE) / (lam3 * lam3),
                         -v * K / lam3 / Fr, -2.0 * v * K / lam3 / Ft], axis=-1)
    res.d_mu[..., 0] += -s_ocv * chemistry._docv_raw(cc) * inside
    g = out["dmu_dc"]
    dg = np.stack([-s_ocv * chemistry._d2ocv_raw(cc) * inside
                   - v * v * K * v * (3.0 + 2.0 * trE) / lam3**3,
                   v * v * K / (lam3 * lam3) / Fr,
                   2.0 * v * v * K / (lam3 * lam3) / Ft], axis=-1)
    floor = g >= chemistry.EPS_MOBILITY
    gs = np.maximum(g, chemistry.EPS_MOBILITY)
    res.d_mob = np.where(floor[..., None], -params.Fo / (gs * gs)[..., None] * dg, 0.0)
