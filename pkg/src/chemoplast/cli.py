"""Command line driver: single runs, parameter sweeps and the invariant suite.

Configuration files hold one ``key = value`` pair per line; ``#`` starts a
comment. Keys are the flat field names of :class:`ScenarioConfig`,
:class:`PhysicalParams` (SI units) and :class:`IntegratorConfig`, plus two
conveniences:

``particle_radius_nm``
    Particle radius in nm (sets ``L0``).
``sigma_Y_max_gpa``
    Maximal yield stress in GPa (sets ``sigma_Y_max``).

``snapshot_socs`` takes a comma separated list. Command line flags override
the file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import checks
from . import scenario as sc
from .params import ParameterError, PhysicalParams
from .timestepper import IntegratorConfig

SWEEP_HEADER = "chemoplast sweep v1"
SWEEP_AXES = ("c_rate", "radius", "sigma_Y_max")
SWEEP_COLUMNS = ("axis_value", "status", "termination", "n_steps", "mean_newton_iters",
                 "final_soc", "max_eps_pl_v", "sigma_phi_surf_min", "sigma_phi_surf_max",
                 "c_surf_max", "output_dir")

_NESTED = ("physical", "integrator")
_ALIASES = {"particle_radius_nm": ("L0", 1e-9), "sigma_Y_max_gpa": ("sigma_Y_max", 1e9)}


class ConfigError(ValueError):
    """A config problem, tagged with the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _field_defaults():
    """Map each flat key to (owner, default value)."""
    out = {}
    for f in dataclasses.fields(sc.ScenarioConfig):
        if f.name not in _NESTED:
            out[f.name] = ("scenario", getattr(sc.ScenarioConfig(), f.name))
    for owner, cls in (("physical", PhysicalParams), ("integrator", IntegratorConfig)):
        inst = cls()
        for f in dataclasses.fields(cls):
            out[f.name] = (owner, getattr(inst, f.name))
    return out


def _convert(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if default is None:
        return None if raw.lower() == "none" else raw
    return raw


def config_from_mapping(values: dict, lines: dict | None = None) -> sc.ScenarioConfig:
    """Build and validate a config from flat ``key -> raw string`` pairs."""
    lines = lines or {}
    known = _field_defaults()
    parts = {"scenario": {}, "physical": {}, "integrator": {}}
    for key, raw in values.items():
        target, scale = key, None
        if key in _ALIASES:
            target, scale = _ALIASES[key]
        if target not in known:
            raise ConfigError(f"unknown key {key!r}", lines.get(key))
        owner, default = known[target]
        try:
            value = _convert(str(raw).strip(), default)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", lines.get(key)) from None
        parts[owner][target] = value * scale if scale else value
    cfg = sc.ScenarioConfig(physical=PhysicalParams(**parts["physical"]),
                            integrator=IntegratorConfig(**parts["integrator"]),
                            **parts["scenario"])
    try:
        cfg.validate()
    except ParameterError as exc:
        src = next((k for k in values if (_ALIASES.get(k, (k,))[0]) == exc.field), exc.field)
        raise ConfigError(str(exc), lines.get(src)) from None
    except ValueError as exc:
        name = str(exc).split(":", 1)[0]
        raise ConfigError(str(exc), lines.get(name)) from None
    return cfg


def parse_config(path) -> sc.ScenarioConfig:
    """Read a ``key = value`` file into a validated :class:`ScenarioConfig`."""
    values, lines = {}, {}
    with open(path) as fh:
        for no, text in enumerate(fh, start=1):
            text = text.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"expected 'key = value', got {text!r}", no)
            key, raw = (s.strip() for s in text.split("=", 1))
            if key in values:
                raise ConfigError(f"duplicate key {key!r}", no)
            values[key], lines[key] = raw, no
    return config_from_mapping(values, lines)


def apply_overrides(cfg: sc.ScenarioConfig, args) -> sc.ScenarioConfig:
    """Fold command line flags into ``cfg`` and revalidate."""
    top, phys = {}, {}
    if getattr(args, "out", None):
        top["output_dir"] = args.out
    if getattr(args, "model", None):
        top["model"] = args.model
    if getattr(args, "tangent", None):
        top["tangent_mode"] = args.tangent
    if getattr(args, "strain", None):
        top["strain_measure"] = args.strain
    if getattr(args, "cycles", None) is not None:
        top["n_half_cycles"] = args.cycles
    if getattr(args, "crate", None) is not None:
        phys["c_rate"] = args.crate
    if getattr(args, "radius_nm", None) is not None:
        phys["L0"] = args.radius_nm * 1e-9
    if getattr(args, "sigma_y_max_gpa", None) is not None:
        phys["sigma_Y_max"] = args.sigma_y_max_gpa * 1e9
    cfg = dataclasses.replace(cfg, physical=dataclasses.replace(cfg.physical, **phys), **top)
    try:
        return cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _print_summary(res: sc.RunResult, out=sys.stdout):
    s = res.summary
    print(f"termination: {s['termination']}", file=out)
    print(f"steps: {s['n_steps']} (rejected {s['n_rejected']}), mean Newton iterations "
          f"{s['mean_newton_iters']:.3f}", file=out)
    print(f"final SOC: {s['final_soc']:.6f}, max eps_pl_v: {s['max_eps_pl_v']:.6g}", file=out)
    print(f"wall time: {s['time_total_s']:.2f} s (assembly {s['time_assembly_s']:.2f} s, "
          f"solve {s['time_solve_s']:.2f} s)", file=out)


def _failed(res: sc.RunResult) -> bool:
    return res.termination.startswith("failed")


def run_scenario(cfg: sc.ScenarioConfig) -> int:
    """Run one scenario, write its artifacts and return the exit status."""
    res = sc.run_scenario(cfg)
    _print_summary(res)
    if _failed(res):
        print(f"error: {res.termination}", file=sys.stderr)
        return 1
    return 0


def _sweep_config(base: sc.ScenarioConfig, axis: str, value: float, out_dir: Path):
    if axis == "c_rate":
        phys = {"c_rate": value}
    elif axis == "radius":
        phys = {"L0": value * 1e-9}
    elif axis == "sigma_Y_max":
        phys = {"sigma_Y_max": value * 1e9}
    else:
        raise ValueError(f"axis: unknown value {axis!r}")
    return dataclasses.replace(base, physical=dataclasses.replace(base.physical, **phys),
                               output_dir=str(out_dir)).validate()


def _sweep_row(value, res: sc.RunResult | None, status: str, termination: str, out_dir):
    if res is None or not res.records:
        nan = float("nan")
        return [value, status, termination, 0, nan, nan, nan, nan, nan, nan, out_dir]
    s = res.summary
    sig = np.array([r.sigma_phi_surf for r in res.records])
    csurf = np.array([r.c_surf for r in res.records])
    return [value, status, termination, s["n_steps"], s["mean_newton_iters"], s["final_soc"],
            s["max_eps_pl_v"], float(sig.min()), float(sig.max()), float(csurf.max()), out_dir]


def run_sweep(base: sc.ScenarioConfig, axis: str, values, out_dir=None):
    """Run ``base`` once per value of ``axis`` and write ``sweep.csv``.

    ``radius`` values are in nm and ``sigma_Y_max`` values in GPa. A run
    stopped by a saturated surface is recorded with status ``terminated``;
    failures are recorded and the sweep carries on.

    Returns
    -------
    rows : list of list
        One row per value in :data:`SWEEP_COLUMNS` order.
    n_failed : int
    """
    values = list(values)
    if not values:
        raise ValueError("values: need at least one sweep value")
    root = Path(out_dir or base.output_dir or "sweep_out")
    root.mkdir(parents=True, exist_ok=True)
    rows, n_failed = [], 0
    for v in values:
        sub = root / f"{axis}_{v:g}"
        res = None
        try:
            cfg = _sweep_config(base, axis, float(v), sub)
            res = sc.run_scenario(cfg)
            term = res.termination
            status = "failed" if _failed(res) else (
                "terminated" if term != "completed" else "ok")
        except Exception as exc:  # noqa: BLE001 - a sweep records and moves on
            status, term = "failed", f"{type(exc).__name__}: {exc}"
        n_failed += status == "failed"
        rows.append(_sweep_row(float(v), res, status, term, sub.name))
        print(f"{axis} = {v:g}: {status} ({term})")
    with open(root / "sweep.csv", "w", newline="") as fh:
        fh.write(f"# {SWEEP_HEADER} axis={axis}\n")
        wr = csv.writer(fh)
        wr.writerow(SWEEP_COLUMNS)
        for row in rows:
            wr.writerow([sc._fmt(x) if isinstance(x, (int, float)) else x for x in row])
    return rows, n_failed


def run_checks(quick: bool = False) -> int:
    results = checks.run_all(quick=quick)
    for r in results:
        print(r.line())
    n_bad = sum(not r.passed for r in results)
    print(f"{len(results) - n_bad} passed, {n_bad} failed")
    return 1 if n_bad else 0


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--model", choices=sc.SCENARIO_MODELS)
    p.add_argument("--tangent", choices=("analytic", "ad"))
    p.add_argument("--strain", choices=("hencky", "gsv"))
    p.add_argument("--cycles", type=int, metavar="N", help="number of half cycles")
    p.add_argument("--crate", type=float, metavar="C", help="C-rate in 1/h")
    p.add_argument("--radius-nm", type=float, metavar="R", help="particle radius in nm")
    p.add_argument("--sigma-y-max-gpa", type=float, metavar="S",
                   help="maximal yield stress in GPa")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chemoplast",
        description="Chemo-mechanical simulation of a spherical silicon particle.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="run one scenario"))
    sw = sub.add_parser("sweep", help="run a scenario for several parameter values")
    _add_run_flags(sw)
    sw.add_argument("--axis", choices=SWEEP_AXES, required=True)
    sw.add_argument("--values", type=float, nargs="+", required=True,
                    help="values on the axis (radius in nm, sigma_Y_max in GPa)")
    ck = sub.add_parser("check", help="run the constitutive invariant suite")
    ck.add_argument("--quick", action="store_true", help="tenfold smaller samples")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "check":
        return run_checks(args.quick)
    try:
        cfg = parse_config(args.config) if args.config else sc.ScenarioConfig()
        cfg = apply_overrides(cfg, args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "run":
        if cfg.output_dir is None:
            cfg = dataclasses.replace(cfg, output_dir="chemoplast_out")
        return run_scenario(cfg)
    _, n_failed = run_sweep(cfg, args.axis, args.values)
    return 1 if n_failed else 0


if __name__ == "__main__":
    sys.exit(main())
