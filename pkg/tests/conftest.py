import time

import pytest

from atomscope.expcli import (ExperimentConfig, run_ionization_energy, run_ionization_scan, run_potential_comparison,
                              run_radius_scan)

_verdicts = {}

# scan settings used by the acceptance suite
IONIZATION_CFG = ExperimentConfig(kind="ionization", Z=tuple(range(2, 11)), q=2, kappa=0.1, grid_n=500)
RADIUS_CFG = ExperimentConfig(kind="radius", Z=(1e6, 1e9, 1e12), hf_Z=(10, 30, 50), q=2, kappa=0.3)
POTENTIAL_CFG = ExperimentConfig(kind="potential", Z=(5, 10, 20, 30), q=2, kappa=0.3)
IONIZATION_ENERGY_CFG = ExperimentConfig(kind="ionization-energy", Z=tuple(range(2, 11)), q=2, kappa=0.1)


class Verdicts:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, number: int, passed: bool, detail: str):
        _verdicts[number] = (bool(passed), detail)
        return passed


@pytest.fixture(scope="session")
def verdict():
    return Verdicts()


def _timed(runner, cfg):
    t0 = time.perf_counter()
    rep = runner(cfg)
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="session")
def ionization_report():
    return _timed(run_ionization_scan, IONIZATION_CFG)


@pytest.fixture(scope="session")
def radius_report():
    return _timed(run_radius_scan, RADIUS_CFG)


@pytest.fixture(scope="session")
def potential_report():
    return _timed(run_potential_comparison, POTENTIAL_CFG)


@pytest.fixture(scope="session")
def ionization_energy_report():
    return _timed(run_ionization_energy, IONIZATION_ENERGY_CFG)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_verdicts):
        ok, detail = _verdicts[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
