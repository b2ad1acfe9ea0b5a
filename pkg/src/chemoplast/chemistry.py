"""Open-circuit voltage, chemical potential, mobility and cell voltage.

All functions accept floats or numpy arrays; those used inside the local
kernel also accept :class:`chemoplast.autodiff.Dual` inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .params import DimensionlessParams

# rational OCV fit for amorphous silicon, numerator cubic over (c + D0)
_OCV_NUM = (-0.2453, -0.005270, 0.2477, 0.006457)
_OCV_D0 = 0.002493

#: Lower bound on the concentration derivative of the chemical potential.
EPS_MOBILITY = 1e-8

#: Clamp window for OCV evaluation at intermediate Newton iterates.
C_CLAMP = (1e-6, 1.0 - 1e-6)


class DomainError(ValueError):
    """Raised when a concentration lies outside the admissible interval."""


def _check_open_unit(c, name="c"):
    v = np.asarray(ad.value(c), dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0.0) or np.any(v >= 1.0):
        raise DomainError(f"{name} must lie in the open interval (0, 1)")


def _ocv_raw(c):
    a3, a2, a1, a0 = _OCV_NUM
    return (((a3 * c + a2) * c + a1) * c + a0) / (c + _OCV_D0)


def _docv_raw(c):
    a3, a2, a1, a0 = _OCV_NUM
    d = c + _OCV_D0
    num = ((a3 * c + a2) * c + a1) * c + a0
    dnum = (3.0 * a3 * c + 2.0 * a2) * c + a1
    return dnum / d - num / (d * d)


def _d2ocv_raw(c):
    a3, a2, a1, a0 = _OCV_NUM
    d = c + _OCV_D0
    num = ((a3 * c + a2) * c + a1) * c + a0
    dnum = (3.0 * a3 * c + 2.0 * a2) * c + a1
    d2num = 6.0 * a3 * c + 2.0 * a2
    return d2num / d - 2.0 * dnum / (d * d) + 2.0 * num / (d * d * d)


def ocv(c):
    """Open-circuit voltage in volts for ``c`` in (0, 1).

    >>> round(float(ocv(0.5)), 5)
    0.19568
    """
    _check_open_unit(c)
    return _ocv_raw(c)


def ocv_derivative(c):
    """``dU_OCV/dc`` in volts."""
    _check_open_unit(c)
    return _docv_raw(c)


def ocv_second_derivative(c):
    _check_open_unit(c)
    return _d2ocv_raw(c)


def clamp_concentration(c):
    """Clamp for OCV evaluation at unconverged iterates (zero slope outside)."""
    return ad.clip(c, *C_CLAMP)


def ocv_clamped(c):
    return _ocv_raw(clamp_concentration(c))


def docv_clamped(c):
    return _docv_raw(clamp_concentration(c))


def d2ocv_clamped(c):
    return _d2ocv_raw(clamp_concentration(c))


def d_psi_ch_dc(c, params: DimensionlessParams):
    """Chemical part of the dimensionless chemical potential, ``-U~_OCV(c)``."""
    return -params.ocv_scale * ocv(c)


@dataclass(frozen=True)
class ChemPotentialInput:
    """Local state entering the chemical potential.

    Parameters
    ----------
    c : float
        Concentration in (0, 1).
    trace_CE : float
        Trace of the Mandel stress ``C[E_el]``.
    lambda_ch : float
        Chemical stretch ``(1 + v c)^(1/3)``.
    """

    c: float
    trace_CE: float
    lambda_ch: float


def chemical_potential(inp: ChemPotentialInput, params: DimensionlessParams):
    """``mu = -U~_OCV(c) - (v/3) lambda_ch^-3 tr(C[E_el])``."""
    mech = -(params.v_pmv_tilde / 3.0) * inp.trace_CE / inp.lambda_ch**3
    return d_psi_ch_dc(inp.c, params) + mech


def mobility(dmu_dc, params: DimensionlessParams):
    """Mobility ``Fo / max(dmu_dc, EPS_MOBILITY)``; always positive."""
    return params.Fo / ad.maximum(dmu_dc, EPS_MOBILITY)


def butler_volmer_voltage(c_surf, mu_surf, N_ext, params: DimensionlessParams):
    """Cell voltage in volts from surface kinetics.

    Parameters
    ----------
    c_surf : float
        Surface concentration in (0, 1).
    mu_surf : float
        Dimensionless surface chemical potential (scaled by ``R T``).
    N_ext : float
        Dimensionless inward flux, positive while lithiating.
    """
    c = np.asarray(c_surf, dtype=float)
    if np.any(~(c * (1.0 - c) > 0.0)):
        raise DomainError("exchange current vanishes: c_surf must lie in (0, 1)")
    j0 = params.k0_tilde * np.sqrt(c * (1.0 - c))
    rt_fa = params.voltage_scale
    return (2.0 * rt_fa * params.U0_ref - rt_fa * np.asarray(mu_surf)
            - 2.0 * rt_fa * np.arcsinh(np.asarray(N_ext) / (2.0 * j0)))
