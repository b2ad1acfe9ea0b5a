import functools

import pytest

from chemoplast import scenario as sc
from chemoplast.params import PhysicalParams
from chemoplast.timestepper import IntegratorConfig

_LINES = []

@functools.lru_cache(maxsize=None)
def _run(model, n_half_cycles, tangent, strain, physical, integrator, extra):
    cfg = sc.ScenarioConfig(model=model, n_half_cycles=n_half_cycles, tangent_mode=tangent,
                            strain_measure=strain, physical=PhysicalParams(**dict(physical)),
                            integrator=IntegratorConfig(**dict(integrator)), **dict(extra))
    return sc.run_scenario(cfg)

def run_cached(model="viscoplastic", n_half_cycles=1, tangent="analytic", strain="hencky",
               physical=(), integrator=(), **extra):
    """Scenario runs shared by every test module in the session."""
    return _run(model, n_half_cycles, tangent, strain, tuple(sorted(dict(physical).items())),
                tuple(sorted(dict(integrator).items())), tuple(sorted(extra.items())))

@pytest.fixture(scope="session")
def runs():
    return run_cached

@pytest.fixture(scope="session")
def acceptance():
    """``report(label, passed, detail)`` records one line for the final summary."""

    def report(label, passed, detail):
        _LINES.append(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
        print(_LINES[-1])
        return passed

    return report

def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split("AC")[1].split()[0])):
            terminalreporter.write_line(line)

