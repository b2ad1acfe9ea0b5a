import math

import numpy as np
import pytest

from chemoplast import fem1d
from chemoplast.params import PhysicalParams, nondimensionalize, soc_of_field

D = nondimensionalize(PhysicalParams())


def test_mesh_counts():
    m = fem1d.build_mesh(5, 4)
    assert m.n_elements == 32
    assert m.n_nodes == 129
    assert m.n_dofs == 387
    assert m.half_bandwidth == 14


def test_quadrature_integrates_sphere():
    m = fem1d.build_mesh(3, 4)
    assert m.weight_q.sum() == pytest.approx(4.0 * math.pi / 3.0, rel=1e-14)
    # int_0^1 r^2 * 4 pi r^4 dr is a degree-6 polynomial; 6 Gauss points are exact
    vals = m.r_q**4
    assert np.sum(m.weight_q * vals) == pytest.approx(4.0 * math.pi / 7.0, rel=1e-13)


def test_soc_of_uniform_field():
    m = fem1d.build_mesh(4, 3)
    assert soc_of_field(np.full(m.n_nodes, 0.37), m) == pytest.approx(0.37, rel=1e-14)


def test_refine_coarsen_round_trip():
    m = fem1d.build_mesh(3, 4, max_level=6)
    mark = np.zeros(m.n_elements, dtype=bool)
    mark[-1] = True
    r = m.refine(mark)
    r.check_invariants()
    assert r.n_elements == m.n_elements + 1
    rr = r.refine(np.arange(r.n_elements) == r.n_elements - 1)
    rr.check_invariants()
    back = rr.coarsen(np.ones(rr.n_elements, dtype=bool))
    back = back.coarsen(np.ones(back.n_elements, dtype=bool))
    assert back.same_as(m)


def test_closure_keeps_level_jumps_at_one():
    m = fem1d.build_mesh(2, 2, max_level=6)
    for _ in range(4):
        m = m.refine(np.arange(m.n_elements) == m.n_elements - 1)
    m.check_invariants()
    assert m.levels.max() == 6
    assert np.all(np.abs(np.diff(m.levels)) <= 1)


def _smooth_state(mesh):
    r = mesh.node_coords
    c = 0.3 + 0.2 * np.tanh(6 * (r - 0.6))
    return fem1d.pack_fields(c, np.sin(r), 0.1 * r**2)


def test_l2_transfer_conserves_mass():
    m = fem1d.build_mesh(3, 4, max_level=7)
    y = _smooth_state(m)
    mark = m.r_left > 0.5
    new = m.refine(mark)
    y_new = fem1d.transfer_solution(y, m, new)
    assert soc_of_field(fem1d.split_fields(y_new)[0], new) == pytest.approx(
        soc_of_field(fem1d.split_fields(y)[0], m), abs=1e-14)
    back = new.coarsen(np.ones(new.n_elements, dtype=bool))
    y_back = fem1d.transfer_solution(y_new, new, back)
    assert soc_of_field(fem1d.split_fields(y_back)[0], back) == pytest.approx(
        soc_of_field(fem1d.split_fields(y)[0], m), abs=1e-14)


def test_refine_then_coarsen_reproduces_field():
    # nested spaces: projecting up and back down is exact, which is stronger
    # than the h^(p+1) interpolation bound
    for level in (3, 4):
        m = fem1d.build_mesh(level, 4, max_level=level + 1)
        y = _smooth_state(m)
        fine = m.refine(np.ones(m.n_elements, dtype=bool))
        back = fem1d.transfer_solution(fem1d.transfer_solution(y, m, fine), fine, m)
        np.testing.assert_allclose(back, y, atol=1e-12)


def test_indicator_converges_at_order_p():
    etas = []
    for level in (3, 4, 5):
        m = fem1d.build_mesh(level, 4)
        r = m.node_coords
        c = 0.3 + 0.2 * np.tanh(3 * (r - 0.5))
        y = fem1d.pack_fields(c, 0 * r, 0 * r)
        etas.append(np.sqrt(np.sum(fem1d.estimate_spatial_error(y, m) ** 2)))
    rates = np.log2(np.array(etas[:-1]) / np.array(etas[1:]))
    assert np.all(rates > 3.5), rates


def test_marking_maximum_strategy():
    eta = np.array([1.0, 0.6, 0.4, 0.01, 0.001])
    refine, coarsen = fem1d.mark_elements(eta, theta_r=0.5, theta_c=0.05)
    np.testing.assert_array_equal(refine, [True, True, False, False, False])
    np.testing.assert_array_equal(coarsen, [False, False, False, True, True])
    refine, _ = fem1d.mark_elements(eta, 0.5, 0.05, tol=2.0)
    assert not refine.any()


def test_history_transfer_bounds_and_volume():
    m = fem1d.build_mesh(3, 4, max_level=5)
    q = fem1d.QuadratureField.virgin(m)
    rng = np.random.default_rng(0)
    q.eps[:] = rng.uniform(0, 0.05, q.eps.shape)
    q.Lr[:] = rng.uniform(-0.03, 0.03, q.Lr.shape)
    new = m.refine(np.ones(m.n_elements, dtype=bool))
    qn = fem1d.transfer_history(q, m, new)
    assert qn.eps.shape == (new.n_elements, new.nq)
    assert qn.eps.min() >= q.eps.min() and qn.eps.max() <= q.eps.max()
    Fr, Ft = qn.F_pl_diag()
    np.testing.assert_allclose(Fr * Ft * Ft, 1.0, rtol=1e-15)


def test_initial_state_is_consistent():
    m = fem1d.build_mesh(4, 4)
    y, q = fem1d.initial_state(m, D)
    ev = fem1d.RadialAssembler(m, D, "plastic").evaluate(y, q, 1e-3, 0.0)
    assert np.max(np.abs(ev.f)) < 1e-12


@pytest.mark.parametrize("model", ["elastic", "plastic", "viscoplastic"])
@pytest.mark.parametrize("mode", ["analytic", "ad"])
def test_jacobian_matches_differences(model, mode):
    m = fem1d.build_mesh(3, 4)
    y, q = fem1d.initial_state(m, D)
    c, mu, u = fem1d.split_fields(y)
    r = m.node_coords
    y = fem1d.pack_fields(c + 0.4 * r**3, mu - 3.0 * r**2, u * (1 + 0.02 * r**2))
    J = fem1d.RadialAssembler(m, D, model, tangent_mode=mode).evaluate(
        y, q, 1e-3, 1 / 3, jacobian=True).J.todense()
    Jfd = fem1d.RadialAssembler(m, D, model, tangent_mode="fd").evaluate(
        y, q, 1e-3, 1 / 3, jacobian=True).J.todense()
    scale = np.max(np.abs(Jfd))
    np.testing.assert_allclose(J, Jfd, atol=1e-5 * scale)


def test_assembler_rejects_unknown_options():
    m = fem1d.build_mesh(2, 2)
    with pytest.raises(ValueError):
        fem1d.RadialAssembler(m, D, "hyperelastic")
    with pytest.raises(ValueError):
        fem1d.RadialAssembler(m, D, "plastic", tangent_mode="symbolic")


def test_snapshot_csv_roundtrip(tmp_path):
    m = fem1d.build_mesh(2, 2)
    y, q = fem1d.initial_state(m, D)
    ev = fem1d.RadialAssembler(m, D, "plastic").evaluate(y, q, 1e-3, 0.0)
    snap = fem1d.field_snapshot(y, ev.response, m, D)
    path = tmp_path / "snap.csv"
    fem1d.write_snapshot_csv(path, snap)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    assert data.shape == (m.n_elements * m.nq, len(snap))
    np.testing.assert_array_equal(data[:, 0], snap["r"])
