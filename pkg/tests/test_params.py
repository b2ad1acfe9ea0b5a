import dataclasses
import math

import pytest

from chemoplast.params import (ParameterError, PhysicalParams, lame_constants,
                               nondimensionalize, redimensionalize)

# frozen from hand evaluation of the scaling formulas with the default SI set
E_TILDE = 116.73694249733046
V_TILDE = 3.4137112
FO = 14.400000000000004


def test_default_scaling():
    d = nondimensionalize(PhysicalParams())
    assert d.E_tilde == pytest.approx(E_TILDE, rel=1e-12)
    assert d.v_pmv_tilde == pytest.approx(V_TILDE, rel=1e-12)
    assert d.Fo == pytest.approx(FO, rel=1e-12)
    assert d.N_ext_tilde == pytest.approx(1.0 / 3.0)


def test_yield_stresses_are_cylinder_radii():
    p = PhysicalParams()
    d = nondimensionalize(p)
    ratio = d.sigma_Y_max_tilde / (p.sigma_Y_max / p.stress_scale)
    assert ratio == pytest.approx(math.sqrt(2.0 / 3.0), rel=1e-14)
    assert d.gamma_iso_tilde == pytest.approx(p.gamma_iso / p.stress_scale, rel=1e-14)


def test_lame_constants():
    lam, G, K = lame_constants(116.74, 0.22)
    assert G == pytest.approx(47.84426229508197, rel=1e-12)
    assert lam == pytest.approx(37.59192037470726, rel=1e-12)
    assert K == pytest.approx(69.48809523809523, rel=1e-12)


def test_round_trip():
    p = PhysicalParams(L0=80e-9, c_rate=0.7, sigma_Y_max=9e8)
    back = redimensionalize(nondimensionalize(p), p)
    for key, val in back.items():
        assert val == pytest.approx(getattr(p, key), rel=1e-12), key


def test_c_rate_scales_time_not_flux():
    a = nondimensionalize(PhysicalParams())
    b = nondimensionalize(PhysicalParams(c_rate=0.5))
    assert b.Fo == pytest.approx(2.0 * a.Fo)
    assert b.eps_dot_0_tilde == pytest.approx(2.0 * a.eps_dot_0_tilde)
    assert b.N_ext_tilde == a.N_ext_tilde


@pytest.mark.parametrize("field,value", [("nu", 0.7), ("nu", 0.5), ("E", -1.0),
                                         ("L0", 0.0), ("c0_frac", 1.0),
                                         ("sigma_Y_min", 9e8), ("D", float("nan"))])
def test_validation_names_field(field, value):
    p = dataclasses.replace(PhysicalParams(), **{field: value})
    with pytest.raises(ParameterError) as info:
        p.validate()
    assert info.value.field == field


def test_overrides_rederive_moduli():
    d = nondimensionalize(PhysicalParams())
    e = d.with_overrides(E_tilde=2.0 * d.E_tilde)
    assert e.G_shear == pytest.approx(2.0 * d.G_shear)
    assert e.K_bulk == pytest.approx(2.0 * d.K_bulk)
