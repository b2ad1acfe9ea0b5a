import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemoplast import autodiff as ad
from chemoplast import checks
from chemoplast import constitutive as cm
from chemoplast.params import PhysicalParams, nondimensionalize

D = nondimensionalize(PhysicalParams())

# (1 + v)^(1/3) with v = 10.96e-6 * 311.47e3
STRETCH_FULL = 1.6403428789330696
# bisection on the overstress residual: |s| = 1, sigma_Y = 0.5, tau = 1e-3
VP_GOLDEN = 0.003565739141530944


def test_chemical_stretch():
    assert cm.chemical_stretch(0.0, D) == 1.0
    assert cm.chemical_stretch(1.0, D) == pytest.approx(STRETCH_FULL, rel=1e-12)


def test_hencky_of_diagonal_stretch():
    lam = np.array([1.2, 0.9, 1.05])
    E = cm.hencky_strain(np.diag(lam**2))
    np.testing.assert_allclose(E, np.diag(np.log(lam)), atol=1e-14)


def test_non_spd_rejected():
    with pytest.raises(cm.KinematicError):
        cm.hencky_strain(np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(cm.KinematicError):
        cm.trial_state(np.diag([1.0, 1.0, -1.0]), 0.5, cm.PlasticState.virgin(), D)


def test_stress_free_at_chemical_stretch():
    c = 0.6
    F = float(cm.chemical_stretch(c, D)) * np.eye(3)
    _, M = cm.trial_state(F, c, cm.PlasticState.virgin(), D)
    np.testing.assert_allclose(M, 0.0, atol=1e-13)


def test_viscoplastic_golden():
    de = cm.solve_viscoplastic_increment(1.0, 0.5, 1e-3, D)
    assert float(de) == pytest.approx(VP_GOLDEN, abs=1e-12)


def test_viscoplastic_inactive_below_yield():
    de = cm.solve_viscoplastic_increment(np.array([0.1, 0.5]), 0.5, 1e-3, D)
    np.testing.assert_array_equal(de, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 0.97), st.floats(1e-6, 5.0), st.floats(-8.0, 0.0))
def test_viscoplastic_root_properties(c, over, logtau):
    sy = float(cm.initial_yield(c, D))
    sn, tau = sy + over, 10.0**logtau
    de = float(cm.solve_viscoplastic_increment(sn, sy, tau, D))
    assert 0.0 < de < over / (2.0 * D.G_shear)
    assert abs(cm.viscoplastic_residual(de, sn, sy, tau, D)) <= 1e-11


def test_viscoplastic_slow_limit():
    # small steps barely relax, huge steps approach the ideal return
    sn, sy = 1.0, 0.5
    small = float(cm.solve_viscoplastic_increment(sn, sy, 1e-12, D))
    big = float(cm.solve_viscoplastic_increment(sn, sy, 1e6, D))
    x0 = (sn - sy) / D.sigma_Y_star_tilde
    assert small == pytest.approx(1e-12 * D.eps_dot_0_tilde * x0**D.beta, rel=1e-6)
    assert big == pytest.approx((sn - sy) / (2.0 * D.G_shear), rel=1e-3)


def test_rate_independent_increment_formula():
    rng = np.random.default_rng(5)
    M = checks.random_mandel(rng, 1, 2.0)[0]
    old = cm.PlasticState(np.eye(3), 0.01)
    proj = cm.project_rate_independent(M, 0.3, old, D)
    sF = float(cm.yield_stress(0.3, 0.01, D))
    expect = (2.0 - sF) / (2.0 * D.G_shear + D.gamma_iso_tilde)
    assert float(proj.delta_eps) == pytest.approx(expect, rel=1e-13)
    # pressure untouched, direction unchanged
    assert np.trace(proj.M) == pytest.approx(np.trace(M), rel=1e-13)
    np.testing.assert_allclose(cm.deviator(proj.M) / cm.dev_norm(proj.M),
                               cm.deviator(M) / cm.dev_norm(M), atol=1e-13)


def test_elastic_projection_is_identity():
    M = np.diag([3.0, -1.0, 0.5])
    proj = cm.project(M, 0.5, cm.PlasticState.virgin(), D, model="elastic")
    np.testing.assert_array_equal(proj.M, M)
    assert not proj.plastic_active


def test_projection_errors():
    M = np.eye(3)
    with pytest.raises(ValueError):
        cm.project(M, 0.5, cm.PlasticState.virgin(), D, model="viscoplastic")
    with pytest.raises(ValueError):
        cm.project(M, 0.5, cm.PlasticState.virgin(), D, model="cam-clay")


def test_kkt_small_sample():
    r = checks.check_return_mapping(n=2000, seed=11)
    assert r.passed, r.line()


def test_flow_update_keeps_det():
    r = checks.check_incompressibility(n_updates=500, seed=4)
    assert r.passed, r.line()


@pytest.mark.parametrize("model", ["elastic", "plastic", "viscoplastic"])
def test_tangent_major_symmetry(model):
    rng = np.random.default_rng(3)
    M = checks.random_mandel(rng, 1, 2.0)[0]
    old = cm.PlasticState(np.eye(3), 0.0)
    T = checks._analytic_tangent(M, 0.4, old, D, model, 1e-3)
    V = T.voigt()
    np.testing.assert_allclose(V[:3, :3], V[:3, :3].T, atol=1e-12)
    np.testing.assert_allclose(T.C, np.swapaxes(T.C, 0, 1), atol=1e-12)


def test_piola_and_cauchy_consistent():
    rng = np.random.default_rng(8)
    F = np.eye(3) * 1.3 + 0.05 * rng.normal(size=(3, 3))
    old = cm.PlasticState(np.eye(3), 0.0)
    kin, M = cm.trial_state(F, 0.5, old, D)
    P = cm.first_piola(kin, M)
    sigma = cm.cauchy_stress(P, F)
    np.testing.assert_allclose(sigma, sigma.T, atol=1e-12)
    # Kirchhoff and Mandel stress share their trace
    assert np.trace(sigma) * np.linalg.det(F) == pytest.approx(np.trace(M), rel=1e-10)


def test_piola_tangent_matches_differences():
    rng = np.random.default_rng(9)
    F = np.eye(3) * 1.25 + 0.03 * rng.normal(size=(3, 3))
    old = cm.PlasticState(np.eye(3), 0.0)
    A = ad.piola_tangent_via_ad(F, 0.4, old, D, model="plastic")
    h = 1e-6
    for i in range(3):
        for j in range(3):
            dF = np.zeros((3, 3))
            dF[i, j] = h
            Pp = cm.first_piola(*_kin_M(F + dF, old))
            Pm = cm.first_piola(*_kin_M(F - dF, old))
            np.testing.assert_allclose(A[:, :, i, j], (Pp - Pm) / (2 * h), rtol=1e-5, atol=1e-6)


def _kin_M(F, old):
    kin, M_tri = cm.trial_state(F, 0.4, old, D)
    return kin, cm.project(M_tri, 0.4, old, D, model="plastic").M


# ------------------------------------------------------------ radial kernel

def _radial_states(n, seed, loaded):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.05, 0.9, n)
    lam = np.cbrt(1.0 + D.v_pmv_tilde * c)
    Fr = lam * (1.0 + rng.uniform(-loaded, loaded, n))
    Ft = lam * (1.0 + rng.uniform(-loaded, loaded, n))
    Lr = rng.uniform(-0.02, 0.02, n)
    eps = np.abs(Lr) + rng.uniform(0.0, 0.01, n)
    return c, Fr, Ft, Lr, eps


@pytest.mark.parametrize("model", ["elastic", "plastic", "viscoplastic"])
def test_radial_derivatives_analytic_vs_ad_vs_fd(model):
    c, Fr, Ft, Lr, eps = _radial_states(200, 1, 0.03)
    tau = 1e-3
    an = cm.radial_response(c, Fr, Ft, Lr, eps, D, model, tau, derivatives="analytic")
    au = cm.radial_response(c, Fr, Ft, Lr, eps, D, model, tau, derivatives="ad")
    for name in ("d_mu", "d_mob", "d_Pr", "d_Pt"):
        a, b = getattr(an, name), getattr(au, name)
        np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-8 * np.max(np.abs(b)))
    h = 1e-7
    args = [c, Fr, Ft]
    for k in range(3):
        up = [a.copy() for a in args]
        dn = [a.copy() for a in args]
        up[k] += h
        dn[k] -= h
        rp = cm.radial_response(*up, Lr, eps, D, model, tau)
        rm = cm.radial_response(*dn, Lr, eps, D, model, tau)
        same = rp.active == rm.active
        for name, d in (("P_r", an.d_Pr), ("P_t", an.d_Pt), ("mu_loc", an.d_mu)):
            fd = (getattr(rp, name) - getattr(rm, name)) / (2 * h)
            np.testing.assert_allclose(d[same, k], fd[same], rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("strain", ["hencky", "gsv"])
@pytest.mark.parametrize("model", ["plastic", "viscoplastic"])
def test_committed_state_reevaluates_consistently(strain, model):
    c, Fr, Ft, Lr, eps = _radial_states(300, 2, 0.05)
    first = cm.radial_response(c, Fr, Ft, Lr, eps, D, model, 1e-3, strain=strain)
    assert np.any(first.active)
    again = cm.radial_response(c, Fr, Ft, first.Lr_new, first.eps_new, D, "plastic",
                               1e-3, strain=strain)
    if model == "plastic":
        # the projected state lies on the yield surface: no further flow
        np.testing.assert_allclose(again.delta_eps, 0.0, atol=1e-10)
        np.testing.assert_allclose(again.M_r, first.M_r, atol=1e-9)
        np.testing.assert_allclose(again.mu_loc, first.mu_loc, atol=1e-9)
    # elastic re-evaluation from the committed history reproduces the stress
    el = cm.radial_response(c, Fr, Ft, first.Lr_new, first.eps_new, D, "elastic",
                            strain=strain)
    np.testing.assert_allclose(el.M_t, first.M_t, atol=1e-9)
    np.testing.assert_allclose(el.P_r, first.P_r, atol=1e-9)


def test_gsv_analytic_mode_not_available():
    c, Fr, Ft, Lr, eps = _radial_states(4, 3, 0.01)
    with pytest.raises(NotImplementedError):
        cm.radial_response(c, Fr, Ft, Lr, eps, D, "plastic", strain="gsv",
                           derivatives="analytic")


def test_gsv_matches_hencky_for_small_elastic_strain():
    c, Fr, Ft, Lr, eps = _radial_states(50, 4, 1e-5)
    a = cm.radial_response(c, Fr, Ft, 0 * Lr, 0 * eps, D, "elastic", strain="hencky")
    b = cm.radial_response(c, Fr, Ft, 0 * Lr, 0 * eps, D, "elastic", strain="gsv")
    scale = np.max(np.abs(a.M_r))
    np.testing.assert_allclose(b.M_r, a.M_r, atol=1e-3 * scale)


def test_radial_kernel_rejects_inversion():
    with pytest.raises(cm.KinematicError):
        cm.radial_response([0.5], [-1.0], [1.0], [0.0], [0.0], D, "elastic")
