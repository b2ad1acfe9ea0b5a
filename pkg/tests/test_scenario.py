import json

import numpy as np
import pytest

from chemoplast import scenario as sc


def test_default_run_summary(runs):
    res = runs()
    s = res.summary
    assert s["termination"] == "completed"
    assert s["final_soc"] == pytest.approx(0.92, abs=1e-3)
    assert s["n_mesh_changes"] > 0
    assert s["max_mass_error"] < 1e-10
    assert set(res.snapshots) == {(1, 0.13), (1, 0.5), (1, 0.92)}
    for key in ("time_assembly_s", "time_solve_s", "mean_newton_iters", "n_jacobians"):
        assert key in s
    json.dumps(s)


def test_orders_capped_at_two(runs):
    assert max(r.order for r in runs().records) <= 2


def test_runs_are_reproducible():
    cfg = sc.ScenarioConfig(model="elastic")
    a, b = sc.run_scenario(cfg), sc.run_scenario(cfg)
    assert [vars(r) for r in a.records] == [vars(r) for r in b.records]


def test_snapshots_hit_requested_soc(runs):
    res = runs()
    for (hc, soc), snap in res.snapshots.items():
        assert hc == 1
        rec = min(res.records, key=lambda r: abs(r.SOC - soc))
        assert rec.SOC == pytest.approx(soc, abs=1e-9)
        assert snap["r"].size == snap["c"].size


def test_elastic_half_cycles_repeat():
    # compare same-direction half cycles at fixed states of charge
    socs = (0.1, 0.3, 0.5, 0.7, 0.9)
    cfg = sc.ScenarioConfig(model="elastic", n_half_cycles=9, snapshot_socs=socs,
                            integrator=sc.IntegratorConfig(rel_tol_t=1e-6, abs_tol_t=1e-9))
    res = sc.run_scenario(cfg)
    assert res.termination == "completed"
    T = res.records[-1].t / 9
    table = {}
    for r in res.records:
        k = int(np.floor(r.t / T - 1e-9))
        for s in socs:
            if abs(r.SOC - s) < 1e-9:
                table[(k, s)] = r.sigma_phi_surf
    for group in ((2, 4, 6, 8), (1, 3, 5, 7)):
        arr = np.array([[table[(k, s)] for s in socs] for k in group])
        assert np.max(np.abs(arr - arr[-1])) <= 1e-6


def test_voltage_cutoff_mode():
    cfg = sc.ScenarioConfig(model="elastic", n_half_cycles=2, voltage_cutoff=True,
                            snapshot_socs=())
    res = sc.run_scenario(cfg)
    assert res.summary["half_cycle_end"] == ["voltage", "voltage"]
    U = np.array([r.U_voltage for r in res.records])
    assert U.min() <= cfg.U_min + 1e-2


def test_ideal_plastic_yields_more():
    ideal = sc.run_scenario(sc.ScenarioConfig(model="ideal_plastic", snapshot_socs=()))
    hard = sc.run_scenario(sc.ScenarioConfig(model="plastic", snapshot_socs=()))
    assert ideal.summary["max_eps_pl_v"] > hard.summary["max_eps_pl_v"]


def test_uniform_mesh_option():
    res = sc.run_scenario(sc.ScenarioConfig(model="elastic", adaptive=False, min_level=4,
                                            snapshot_socs=()))
    assert res.summary["n_mesh_changes"] == 0
    assert res.summary["n_elements_final"] == 16


@pytest.mark.parametrize("change,field", [(dict(model="foo"), "model"),
                                          (dict(n_half_cycles=0), "n_half_cycles"),
                                          (dict(strain_measure="gsv"), "strain_measure"),
                                          (dict(snapshot_socs=(1.5,)), "snapshot_socs")])
def test_config_validation(change, field):
    with pytest.raises(ValueError, match=field):
        sc.ScenarioConfig(**change).validate()
