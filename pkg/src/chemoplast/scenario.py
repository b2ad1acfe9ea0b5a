"""Charge/discharge scenarios: the control loop around stepper and mesh."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import fem1d
from .banded import BandMatrix
from .fem1d import QuadratureField, RadialAssembler
from .params import DimensionlessParams, PhysicalParams, nondimensionalize
from .timestepper import IntegrationError, IntegratorConfig, NDFIntegrator, StepRecord

SCENARIO_MODELS = ("elastic", "plastic", "ideal_plastic", "viscoplastic")
CSV_HEADER = "chemoplast steps v1"
#: State of charge reached at the end of a lithiation half cycle.
SOC_MAX = 0.92


@dataclass
class ScenarioConfig:
    """Everything a run needs; physical inputs stay in SI units."""

    model: str = "viscoplastic"
    tangent_mode: str = "analytic"
    strain_measure: str = "hencky"
    n_half_cycles: int = 1
    output_dir: str | None = None
    snapshot_socs: tuple = (0.13, 0.5, 0.92)
    physical: PhysicalParams = field(default_factory=PhysicalParams)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    adaptive: bool = True
    min_level: int = 5
    max_level: int = 8
    p_order: int = 4
    n_quad: int = 6
    theta_r: float = 0.5
    theta_c: float = 0.05
    rel_tol_x: float = 1e-5
    abs_tol_x: float = 1e-8
    n_adapt: int = 5
    stop_on_saturation: bool = True
    voltage_cutoff: bool = False
    U_min: float = 0.05
    U_max: float = 0.5

    def validate(self) -> "ScenarioConfig":
        if self.model not in SCENARIO_MODELS:
            raise ValueError(f"model: unknown value {self.model!r}")
        if self.tangent_mode not in ("analytic", "ad"):
            raise ValueError(f"tangent_mode: unknown value {self.tangent_mode!r}")
        if self.strain_measure not in ("hencky", "gsv"):
            raise ValueError(f"strain_measure: unknown value {self.strain_measure!r}")
        if self.strain_measure == "gsv" and self.tangent_mode == "analytic":
            raise ValueError("strain_measure: the GSV measure needs tangent_mode = ad")
        if self.n_half_cycles < 1:
            raise ValueError("n_half_cycles: must be >= 1")
        if not 0 <= self.min_level <= self.max_level:
            raise ValueError("min_level/max_level: need 0 <= min_level <= max_level")
        if not 1 <= self.p_order <= 4:
            raise ValueError("p_order: must lie in 1..4")
        if self.n_adapt < 1:
            raise ValueError("n_adapt: must be >= 1")
        if self.voltage_cutoff and not self.U_min < self.U_max:
            raise ValueError("U_min/U_max: need U_min < U_max")
        for s in self.snapshot_socs:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"snapshot_socs: {s} outside [0, 1]")
        self.physical.validate()
        self.integrator.validate()
        return self

    def dimensionless(self) -> DimensionlessParams:
        d = nondimensionalize(self.physical)
        if self.model == "ideal_plastic":
            d = d.with_overrides(gamma_iso_tilde=0.0)
        return d

    @property
    def kernel_model(self) -> str:
        return "plastic" if self.model == "ideal_plastic" else self.model


class ParticleProblem:
    """The spherical particle as a DAE for :class:`NDFIntegrator`."""

    def __init__(self, mesh, params, model, strain, tangent_mode, q: QuadratureField,
                 N_ext: float = 0.0):
        self.mesh, self.params, self.model, self.strain = mesh, params, model, strain
        self.asm = RadialAssembler(mesh, params, model, strain, tangent_mode)
        self.q = q
        self.N_ext = N_ext
        self.n = mesh.n_dofs
        self.last_response = None
        self.last_surface = None
        self.last_delta_eps = 0.0

    def mass(self) -> BandMatrix:
        return self.asm.mass()

    def evaluate(self, t, y, tau, jacobian=False):
        ev = self.asm.evaluate(y, self.q, tau, self.N_ext, jacobian)
        self._last = (tau, np.array(y, dtype=float), ev)
        return ev.f, ev.J

    def accept(self, t, y, tau):
        last = getattr(self, "_last", None)
        if last is not None and last[0] == tau and np.array_equal(last[1], y):
            ev = last[2]
        else:
            ev = self.asm.evaluate(y, self.q, tau, self.N_ext)
        self._last = None
        self.last_surface = fem1d.surface_trace(y, self.q, self.mesh, self.params,
                                                self.model, tau, self.N_ext, self.strain)
        self.last_response = ev.response
        self.last_delta_eps = float(np.max(ev.response.delta_eps, initial=0.0))
        self.q = ev.trial

    def soc(self, y) -> float:
        c = fem1d.split_fields(y)[0]
        return float(self.mesh.node_volume_weights() @ c / (4.0 * math.pi / 3.0))


def make_consistent(problem: ParticleProblem, y, tau, max_iter: int = 20, tol: float = 1e-11):
    """Solve the algebraic rows for ``(mu, u)`` with ``c`` held fixed."""
    y = np.array(y, dtype=float)
    c_rows = np.arange(fem1d.C, problem.n, fem1d.N_FIELDS)
    for _ in range(max_iter):
        f, J = problem.evaluate(0.0, y, tau, True)
        f[c_rows] = 0.0
        for i in c_rows:
            J.set_identity_row(int(i), 1.0)
        dy = J.lu().solve(-f)
        y += dy
        if np.max(np.abs(dy)) <= tol * max(1.0, np.max(np.abs(y))):
            break
    return y


@dataclass
class RunResult:
    records: list
    snapshots: dict
    summary: dict
    termination: str
    mesh: object = None
    y: np.ndarray | None = None
    q: QuadratureField | None = None
    half_cycle_delta_eps: list = field(default_factory=list)


def _snapshot_times(t0: float, soc0: float, soc1: float, rate: float, socs):
    """Times where the SOC, moving linearly from ``soc0`` to ``soc1``, passes ``socs``."""
    lo, hi = min(soc0, soc1), max(soc0, soc1)
    out = [(t0 + abs(s - soc0) / rate, s) for s in socs if lo - 1e-12 <= s <= hi + 1e-12]
    return sorted(out)


def run_scenario(cfg: ScenarioConfig, progress=None) -> RunResult:
    """Integrate ``n_half_cycles`` alternating lithiation and delithiation."""
    cfg.validate()
    wall0 = time.perf_counter()
    d = cfg.dimensionless()
    model = cfg.kernel_model
    mesh = fem1d.build_mesh(cfg.min_level, cfg.p_order, cfg.n_quad,
                            max_level=cfg.max_level)
    y, q = fem1d.initial_state(mesh, d)
    N = d.N_ext_tilde
    rate = 3.0 * N
    problem = ParticleProblem(mesh, d, model, cfg.strain_measure, cfg.tangent_mode, q, N)
    integ = NDFIntegrator(problem, 0.0, y, cfg.integrator)
    records: list[StepRecord] = []
    snapshots: dict = {}
    hc_delta = []
    termination = "completed"
    t = 0.0
    n_adapt_calls = 0
    n_mesh_changes = 0
    max_mass_err = 0.0
    half_cycle_end = []
    soc0 = d.c0
    for k in range(cfg.n_half_cycles):
        sign = 1.0 if k % 2 == 0 else -1.0
        problem.N_ext = sign * N
        t0 = t
        soc_target = SOC_MAX if sign > 0 else d.c0
        t_end = t0 + abs(soc_target - soc0) / rate
        if k > 0:
            integ.restart(problem, t, integ.y, cfg.integrator.tau_0)
        events = _snapshot_times(t0, soc0, soc_target, rate, cfg.snapshot_socs)
        end_reason = "time"
        steps_since = 0
        hc_max = 0.0
        while t < t_end - 1e-13:
            pending = [e for e in events if e[0] > t + 1e-13]
            bound = min(pending[0][0], t_end) if pending else t_end
            try:
                info = integ.step(bound)
            except (IntegrationError, fem1d.AssemblyError) as exc:
                termination = f"failed: {exc}"
                break
            t = info.t
            yk = integ.y
            soc = problem.soc(yk)
            soc_exact = soc0 + sign * rate * (t - t0)
            max_mass_err = max(max_mass_err, abs(soc - soc_exact))
            s = problem.last_surface
            hc_max = max(hc_max, problem.last_delta_eps)
            records.append(StepRecord(t, info.tau, info.order, info.newton_iters, soc,
                                      s.c_surf, s.sigma_phi_surf, s.eps_pl_v_surf,
                                      s.U_voltage, info.n_rejected))
            if progress is not None:
                progress(records[-1])
            for te, sv in events:
                if abs(te - t) <= 1e-12:
                    snapshots[(k + 1, sv)] = fem1d.field_snapshot(
                        yk, problem.last_response, problem.mesh, d)
            if cfg.stop_on_saturation and s.c_surf >= 1.0:
                termination = "surface_saturated"
                break
            if cfg.voltage_cutoff and ((sign > 0 and s.U_voltage <= cfg.U_min)
                                       or (sign < 0 and s.U_voltage >= cfg.U_max)):
                end_reason = "voltage"
                break
            steps_since += 1
            at_end = t >= t_end - 1e-13
            if cfg.adaptive and (steps_since >= cfg.n_adapt or at_end):
                steps_since = 0
                n_adapt_calls += 1
                old_mesh = problem.mesh
                new = _adapt(problem, yk, cfg, d, integ.h)
                if new is not None:
                    n_mesh_changes += 1
                    problem, y_new = new
                    if not at_end:
                        # the transfer is linear, so the difference array carries
                        # over and the step continues at its current order
                        D = [y_new] + [fem1d.transfer_solution(integ.hist.D[i], old_mesh,
                                                               problem.mesh)
                                       for i in range(1, integ.order + 3)]
                        integ.remesh(problem, D)
                    else:
                        integ.restart(problem, t, y_new, cfg.integrator.tau_0)
        hc_delta.append(hc_max)
        half_cycle_end.append(end_reason)
        soc0 = problem.soc(integ.y)
        if termination != "completed":
            break
    wall = time.perf_counter() - wall0
    its = np.array([r.newton_iters for r in records]) if records else np.zeros(1)
    summary = {
        "model": cfg.model, "tangent_mode": cfg.tangent_mode,
        "strain_measure": cfg.strain_measure, "c_rate": cfg.physical.c_rate,
        "radius_nm": cfg.physical.L0 * 1e9, "sigma_Y_max": cfg.physical.sigma_Y_max,
        "n_half_cycles": cfg.n_half_cycles, "termination": termination,
        "n_steps": len(records), "n_rejected": int(sum(r.n_rejected for r in records)),
        "mean_newton_iters": float(np.mean(its)),
        "final_t": t, "final_soc": records[-1].SOC if records else d.c0,
        "max_mass_error": max_mass_err,
        "max_eps_pl_v": float(np.max(problem.q.eps)),
        "n_elements_final": problem.mesh.n_elements, "n_mesh_changes": n_mesh_changes,
        "n_adapt_calls": n_adapt_calls,
        "n_jacobians": integ.n_jac, "n_residuals": integ.n_fev,
        "time_assembly_s": integ.timings["assembly"], "time_solve_s": integ.timings["solve"],
        "time_total_s": wall, "half_cycle_max_delta_eps": hc_delta,
        "half_cycle_end": half_cycle_end,
    }
    res = RunResult(records, snapshots, summary, termination, problem.mesh, integ.y,
                    problem.q, hc_delta)
    if cfg.output_dir:
        write_outputs(res, cfg)
    return res


def _adapt(problem: ParticleProblem, y, cfg: ScenarioConfig, d, h):
    mesh = problem.mesh
    eta = fem1d.estimate_spatial_error(y, mesh)
    _, dc = mesh.at_quadrature(fem1d.split_fields(y)[0])
    grad_norm = math.sqrt(float(np.sum(mesh.weight_q * dc * dc)))
    tol = (cfg.rel_tol_x * grad_norm + cfg.abs_tol_x) / math.sqrt(mesh.n_elements)
    new_mesh, q, y_new, changed = fem1d.adapt_mesh(mesh, eta, cfg.theta_c, cfg.theta_r,
                                                   problem.q, y, tol)
    if not changed:
        return None
    new = ParticleProblem(new_mesh, d, problem.model, problem.strain,
                          problem.asm.tangent_mode, q, problem.N_ext)
    y_new = make_consistent(new, y_new, h)
    # transferred history is only approximately admissible; adopt the
    # projected state so the restart sees no jump in the constraints
    new.q = new.asm.evaluate(y_new, new.q, h, new.N_ext).trial
    return new, y_new


def write_outputs(res: RunResult, cfg: ScenarioConfig):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_steps_csv(out / "steps.csv", res.records)
    for (hc, soc), snap in sorted(res.snapshots.items()):
        fem1d.write_snapshot_csv(out / f"snapshot_hc{hc}_soc{soc:.3f}.csv", snap)
    with open(out / "summary.json", "w") as fh:
        json.dump(res.summary, fh, indent=2, sort_keys=True)


def write_steps_csv(path, records):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CSV_HEADER}\n")
        wr = csv.writer(fh)
        wr.writerow(StepRecord.CSV_COLUMNS)
        for r in records:
            wr.writerow([_fmt(getattr(r, c)) for c in StepRecord.CSV_COLUMNS])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"
