"""Physical constants, scaling to dimensionless form and elastic moduli.

Every solver-internal quantity is dimensionless. The reference scales are the
particle radius ``L0``, the cycle time ``t_cycle = 1 / c_rate`` (hours), the
maximal concentration ``c_max`` and the energy density ``R_gas * T * c_max``
for stresses.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

SECONDS_PER_HOUR = 3600.0

#: Factor mapping a uniaxial yield stress onto the radius of the von Mises
#: cylinder measured with the Frobenius norm of the deviator.
TENSILE_SCALE = math.sqrt(2.0 / 3.0)


class ParameterError(ValueError):
    """Raised for a parameter outside its admissible range."""

    def __init__(self, field: str, value, reason: str):
        self.field = field
        self.value = value
        super().__init__(f"{field} = {value!r}: {reason}")


@dataclass(frozen=True)
class PhysicalParams:
    """SI-valued model parameters for an amorphous silicon particle."""

    R_gas: float = 8.314
    Fa: float = 96485.0
    T: float = 298.15
    L0: float = 50e-9
    D: float = 1e-17
    E: float = 90.13e9
    sigma_Y_max: float = 8e8
    sigma_Y_min: float = 2e8
    sigma_Y_star: float = 2e8
    gamma_iso: float = 1.0e9
    eps_dot_0: float = 2.3e-3
    v_pmv: float = 10.96e-6
    c_max: float = 311.47e3
    c0_frac: float = 0.02
    nu: float = 0.22
    beta: float = 2.94
    k0: float = 0.4207
    c_rate: float = 1.0
    U0_ref: float = 0.0

    def validate(self) -> "PhysicalParams":
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f.name, value, "must be a finite number")
        positive = ("R_gas", "Fa", "T", "L0", "D", "E", "sigma_Y_max",
                    "sigma_Y_min", "sigma_Y_star", "eps_dot_0", "v_pmv",
                    "c_max", "beta", "k0", "c_rate")
        for name in positive:
            if getattr(self, name) <= 0.0:
                raise ParameterError(name, getattr(self, name), "must be > 0")
        if self.gamma_iso < 0.0:
            raise ParameterError("gamma_iso", self.gamma_iso, "must be >= 0")
        if not 0.0 < self.nu < 0.5:
            raise ParameterError("nu", self.nu, "must lie in (0, 0.5)")
        if not 0.0 < self.c0_frac < 1.0:
            raise ParameterError("c0_frac", self.c0_frac, "must lie in (0, 1)")
        if self.sigma_Y_min > self.sigma_Y_max:
            raise ParameterError("sigma_Y_min", self.sigma_Y_min,
                                 "must not exceed sigma_Y_max")
        return self

    @property
    def t_cycle_hours(self) -> float:
        return 1.0 / self.c_rate

    @property
    def stress_scale(self) -> float:
        """Energy density ``R_gas T c_max`` in Pa used for all stresses."""
        return self.R_gas * self.T * self.c_max


@dataclass(frozen=True)
class DimensionlessParams:
    """Scaled parameter set consumed by the solver modules.

    Yield-type stresses (``sigma_Y_*_tilde``) are stored as radii of the
    yield cylinder in deviatoric Mandel-stress space, i.e. they already carry
    the ``sqrt(2/3)`` tensile-test factor. The hardening modulus enters the
    yield function unscaled.
    """

    E_tilde: float
    Fo: float
    v_pmv_tilde: float
    sigma_Y_max_tilde: float
    sigma_Y_min_tilde: float
    sigma_Y_star_tilde: float
    gamma_iso_tilde: float
    eps_dot_0_tilde: float
    k0_tilde: float
    N_ext_tilde: float
    lambda_lame: float
    G_shear: float
    K_bulk: float
    t_cycle: float
    nu: float
    beta: float
    c0: float
    ocv_scale: float
    voltage_scale: float
    U0_ref: float = 0.0

    def with_overrides(self, **changes) -> "DimensionlessParams":
        """Return a copy with some fields replaced (moduli are re-derived)."""
        out = replace(self, **changes)
        if "E_tilde" in changes or "nu" in changes:
            lam, G, K = lame_constants(out.E_tilde, out.nu)
            out = replace(out, lambda_lame=lam, G_shear=G, K_bulk=K)
        return out


def lame_constants(E: float, nu: float) -> tuple[float, float, float]:
    """First Lame constant, shear modulus and bulk modulus."""
    G = E / (2.0 * (1.0 + nu))
    lam = 2.0 * G * nu / (1.0 - 2.0 * nu)
    return lam, G, lam + 2.0 * G / 3.0


def nondimensionalize(p: PhysicalParams) -> DimensionlessParams:
    """Scale the SI parameter set.

    Examples
    --------
    >>> d = nondimensionalize(PhysicalParams())
    >>> round(d.E_tilde, 2), round(d.Fo, 2)
    (116.74, 14.4)
    """
    p.validate()
    t_cycle_s = p.t_cycle_hours * SECONDS_PER_HOUR
    stress = p.stress_scale
    E_tilde = p.E / stress
    lam, G, K = lame_constants(E_tilde, p.nu)
    return DimensionlessParams(
        E_tilde=E_tilde,
        Fo=p.D * t_cycle_s / p.L0**2,
        v_pmv_tilde=p.v_pmv * p.c_max,
        sigma_Y_max_tilde=TENSILE_SCALE * p.sigma_Y_max / stress,
        sigma_Y_min_tilde=TENSILE_SCALE * p.sigma_Y_min / stress,
        sigma_Y_star_tilde=TENSILE_SCALE * p.sigma_Y_star / stress,
        gamma_iso_tilde=p.gamma_iso / stress,
        eps_dot_0_tilde=p.eps_dot_0 * t_cycle_s,
        k0_tilde=p.k0 * t_cycle_s / (p.Fa * p.L0 * p.c_max),
        # a C-rate of one fills the unit sphere (volume/area = 1/3) in one
        # cycle time, independent of the rate itself
        N_ext_tilde=1.0 / 3.0,
        lambda_lame=lam,
        G_shear=G,
        K_bulk=K,
        t_cycle=p.t_cycle_hours,
        nu=p.nu,
        beta=p.beta,
        c0=p.c0_frac,
        ocv_scale=p.Fa / (p.R_gas * p.T),
        voltage_scale=p.R_gas * p.T / p.Fa,
        U0_ref=p.U0_ref,
    )


def redimensionalize(d: DimensionlessParams, p: PhysicalParams) -> dict:
    """Map the scaled quantities back to SI values using the scales of ``p``."""
    t_cycle_s = p.t_cycle_hours * SECONDS_PER_HOUR
    stress = p.stress_scale
    return {
        "E": d.E_tilde * stress,
        "D": d.Fo * p.L0**2 / t_cycle_s,
        "v_pmv": d.v_pmv_tilde / p.c_max,
        "sigma_Y_max": d.sigma_Y_max_tilde * stress / TENSILE_SCALE,
        "sigma_Y_min": d.sigma_Y_min_tilde * stress / TENSILE_SCALE,
        "sigma_Y_star": d.sigma_Y_star_tilde * stress / TENSILE_SCALE,
        "gamma_iso": d.gamma_iso_tilde * stress,
        "eps_dot_0": d.eps_dot_0_tilde / t_cycle_s,
        "k0": d.k0_tilde * p.Fa * p.L0 * p.c_max / t_cycle_s,
    }


def as_dict(p) -> dict:
    return asdict(p)


def soc_of_field(c_field, mesh) -> float:
    """Volume average of the concentration over the reference sphere.

    ``c_field`` holds nodal coefficients on ``mesh`` (a
    :class:`chemoplast.fem1d.Mesh1D`); the average uses the ``4 pi r^2``
    weight, so the result is the state of charge.
    """
    c = np.asarray(c_field, dtype=float)
    if mesh.n_elements == 0 or c.size == 0:
        raise ValueError("empty mesh")
    if c.size != mesh.n_nodes:
        raise ValueError(f"field has {c.size} values, mesh has {mesh.n_nodes} nodes")
    return float(mesh.node_volume_weights() @ c / (4.0 * np.pi / 3.0))
