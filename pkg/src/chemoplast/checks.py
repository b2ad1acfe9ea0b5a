"""Fast invariant checks of the constitutive layer.

Each check draws reproducible random states, compares the implementation
against an independent oracle (bisection, finite differences, the yield
function itself) and returns a :class:`CheckResult`. The ``check`` command
prints them; the acceptance tests assert on them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import constitutive as cm
from .params import DimensionlessParams, PhysicalParams, nondimensionalize

#: Reference dimensionless values of the default parameter set.
REFERENCE_TABLE = {
    "E_tilde": 116.74,
    "Fo": 14.4,
    "v_pmv_tilde": 3.41,
    "sigma_Y_max_tilde": 0.85,
    "sigma_Y_min_tilde": 0.21,
    "gamma_iso_tilde": 0.77,
    "k0_tilde": 1.0079,
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    seconds: float = 0.0
    detail: str = ""

    def summary(self) -> str:
        extra = f"  {self.detail}" if self.detail else ""
        return (f"worst {self.value:.3e} (limit {self.limit:.1e}, "
                f"{self.seconds:.2f} s){extra}")

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.summary()}"


def _params(params):
    return nondimensionalize(PhysicalParams()) if params is None else params


def _random_rotations(rng, n):
    Q, R = np.linalg.qr(rng.normal(size=(n, 3, 3)))
    return Q * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]


def random_mandel(rng, n, dev_norm, pressure_scale=2.0):
    """Symmetric stresses with prescribed deviator norm and random orientation.

    The deviatoric part has random principal ratios; the hydrostatic part is
    uniform in ``[-pressure_scale, pressure_scale]``.
    """
    a = rng.normal(size=(n, 3))
    a -= a.mean(axis=1, keepdims=True)
    a *= (np.asarray(dev_norm) / np.linalg.norm(a, axis=1))[:, None]
    Q = _random_rotations(rng, n)
    s = np.einsum("nij,nj,nkj->nik", Q, a, Q)
    p = rng.uniform(-pressure_scale, pressure_scale, n)
    return s + p[:, None, None] * np.eye(3)


def check_dimensionless_table(rel_tol=5e-3) -> list[CheckResult]:
    """One result per entry of :data:`REFERENCE_TABLE`."""
    t0 = time.perf_counter()
    d = nondimensionalize(PhysicalParams())
    dt = time.perf_counter() - t0
    out = []
    for key, ref in REFERENCE_TABLE.items():
        got = float(getattr(d, key))
        err = abs(got - ref) / abs(ref)
        out.append(CheckResult(f"table {key}", err <= rel_tol, err, rel_tol, dt,
                               f"computed {got:.5g}, reference {ref}"))
    return out


def check_return_mapping(n=10_000, seed=0, params=None, tol=1e-9) -> CheckResult:
    """Yield condition and KKT complementarity after rate-independent projection."""
    d = _params(params)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    c = rng.uniform(0.02, 0.98, n)
    eps = rng.uniform(0.0, 0.05, n)
    sF = cm.yield_stress(c, eps, d)
    M_tri = random_mandel(rng, n, sF * rng.uniform(0.2, 3.0, n))
    old = cm.PlasticState(np.broadcast_to(np.eye(3), (n, 3, 3)).copy(), eps)
    proj = cm.project_rate_independent(M_tri, c, old, d)
    dt = time.perf_counter() - t0
    f_post = cm.dev_norm(proj.M) - cm.yield_stress(c, proj.eps_pl_v_new, d)
    de = np.asarray(proj.delta_eps)
    f_tri = cm.dev_norm(M_tri) - sF
    worst = max(
        float(np.max(f_post)),                                 # admissibility
        float(np.max(np.abs(de * f_post))),                    # complementarity
        float(np.max(-de)),                                    # de >= 0
        float(np.max(np.where(f_tri <= 0.0, de, 0.0))),        # elastic steps do not flow
        float(np.max(np.where(de > 0.0, np.abs(f_post), 0.0))),  # consistency
    )
    worst = max(worst, 0.0)
    return CheckResult("return mapping KKT", worst <= tol, worst, tol, dt,
                       f"{int(np.sum(de > 0))} of {n} states plastic")


def bisection_increment(snorm, sigma_Y, tau, params: DimensionlessParams, n_iter=200):
    """Oracle: bisect the viscoplastic residual in the increment itself."""
    G = params.G_shear
    lo = np.zeros_like(snorm)
    hi = np.maximum(snorm - sigma_Y, 0.0) / (2.0 * G)

    def g(de):
        x = np.maximum(snorm - 2.0 * G * de - sigma_Y, 0.0) / params.sigma_Y_star_tilde
        return tau * params.eps_dot_0_tilde * x**params.beta - de

    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        pos = g(mid) > 0.0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


def check_viscoplastic_root(n=1000, seed=1, params=None, tol=1e-10) -> CheckResult:
    """Projected increments against :func:`bisection_increment`."""
    d = _params(params)
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.02, 0.98, n)
    sy = cm.initial_yield(c, d)
    snorm = sy + rng.uniform(1e-6, 5.0, n)
    tau = 10.0 ** rng.uniform(-8.0, -1.0, n)
    M_tri = random_mandel(rng, n, snorm)
    old = cm.PlasticState.virgin((n,))
    t0 = time.perf_counter()
    proj = cm.project_viscoplastic(M_tri, c, old, tau, d)
    dt = time.perf_counter() - t0
    ref = bisection_increment(cm.dev_norm(M_tri), sy, tau, d)
    err = float(np.max(np.abs(np.asarray(proj.delta_eps) - ref)))
    return CheckResult("viscoplastic root vs bisection", err <= tol, err, tol, dt)


def _fd_tangent(E_tri, c, old, d, model, tau, h=1e-6):
    dM = np.zeros((3, 3, 6))
    basis = ad._sym_basis()
    for k, B in enumerate(basis):
        up = cm.project(cm.stiffness_apply(E_tri + h * B, d), c, old, d, tau, model).M
        dn = cm.project(cm.stiffness_apply(E_tri - h * B, d), c, old, d, tau, model).M
        dM[..., k] = (up - dn) / (2.0 * h)
    return cm.TangentBlock.from_directional(dM, basis, d)


def _analytic_tangent(M_tri, c, old, d, model, tau):
    if model == "elastic":
        return cm.TangentBlock.elastic(d)
    if model == "plastic":
        return cm.tangent_rate_independent(M_tri, c, old, d)
    de = cm.project(M_tri, c, old, d, tau, model).delta_eps
    return cm.tangent_viscoplastic(M_tri, c, de, tau, d)


def check_tangents(n=100, seed=2, params=None, tol_ad=1e-8, tol_fd=1e-5) -> list[CheckResult]:
    """Analytic vs AD vs central differences of the projector tangent.

    States closer than 1e-3 to the yield surface are redrawn, since a
    difference quotient across the kink measures neither branch.
    """
    d = _params(params)
    rng = np.random.default_rng(seed)
    worst = {"ad": 0.0, "fd": 0.0}
    t0 = time.perf_counter()
    models = ("elastic", "plastic", "viscoplastic")
    count = {m: 0 for m in models}
    plastic = 0
    while sum(count.values()) < n:
        model = models[sum(count.values()) % 3]
        c = float(rng.uniform(0.05, 0.95))
        eps = float(rng.uniform(0.0, 0.03))
        tau = float(10.0 ** rng.uniform(-5.0, -2.0))
        old = cm.PlasticState(np.eye(3), eps)
        sF = float(cm.yield_stress(c, eps, d))
        M_tri = random_mandel(rng, 1, sF * rng.uniform(0.3, 2.5))[0]
        if abs(cm.dev_norm(M_tri) - sF) < 1e-3 or model == "viscoplastic" and \
                abs(cm.dev_norm(M_tri) - float(cm.initial_yield(c, d))) < 1e-3:
            continue
        E_tri = _strain_of(M_tri, d)
        T_an = _analytic_tangent(M_tri, c, old, d, model, tau)
        T_ad = ad.strain_tangent_via_ad(E_tri, c, old, d, tau_n=tau, model=model)
        T_fd = _fd_tangent(E_tri, c, old, d, model, tau)
        scale = np.max(np.abs(T_an.C))
        worst["ad"] = max(worst["ad"], float(np.max(np.abs(T_an.C - T_ad.C)) / scale))
        worst["fd"] = max(worst["fd"], float(np.max(np.abs(T_an.C - T_fd.C)) / scale))
        plastic += int(model != "elastic" and not np.allclose(T_an.C, cm.TangentBlock.elastic(d).C))
        count[model] += 1
    dt = time.perf_counter() - t0
    detail = f"{n} states, {plastic} on an inelastic branch"
    return [
        CheckResult("tangent analytic vs AD", worst["ad"] <= tol_ad, worst["ad"], tol_ad, dt, detail),
        CheckResult("tangent analytic vs FD", worst["fd"] <= tol_fd, worst["fd"], tol_fd, dt, detail),
    ]


def _strain_of(M, d: DimensionlessParams):
    """Invert the isotropic stiffness map."""
    p = np.trace(M) / 3.0
    return (M - p * np.eye(3)) / (2.0 * d.G_shear) + p / (3.0 * d.K_bulk) * np.eye(3)


def check_incompressibility(n_updates=10_000, n_states=8, seed=3, params=None,
                            tol=1e-8) -> CheckResult:
    """``det F_pl`` drift after many projected flow updates."""
    d = _params(params)
    rng = np.random.default_rng(seed)
    state = cm.PlasticState.virgin((n_states,))
    c = rng.uniform(0.05, 0.95, n_states)
    t0 = time.perf_counter()
    for _ in range(n_updates):
        sF = cm.yield_stress(c, state.eps_pl_v, d)
        # bounded overstress keeps each increment below about 5e-4
        M_tri = random_mandel(rng, n_states, sF + rng.uniform(0.0, 0.05, n_states))
        proj = cm.project_rate_independent(M_tri, c, state, d)
        state = cm.update_plastic_flow(state, proj)
    dt = time.perf_counter() - t0
    drift = float(np.max(np.abs(np.linalg.det(state.F_pl) - 1.0)))
    return CheckResult("det F_pl drift", drift <= tol, drift, tol, dt,
                       f"{n_updates} updates, eps_pl_v up to {float(np.max(state.eps_pl_v)):.3g}")


def run_all(quick: bool = False) -> list[CheckResult]:
    """Every check; ``quick`` shrinks the sample sizes tenfold."""
    k = 10 if quick else 1
    out = check_dimensionless_table()
    out.append(check_return_mapping(n=10_000 // k))
    out.append(check_viscoplastic_root(n=1000 // k))
    out.extend(check_tangents(n=max(100 // k, 6)))
    out.append(check_incompressibility(n_updates=10_000 // k))
    return out
