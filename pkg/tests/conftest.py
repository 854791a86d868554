import json

import numpy as np
import pytest

from mptomo.recon import TomographySystem, precompute
from mptomo.scenario import Scenario

_CRITERIA: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_CRITERIA, key=lambda c: int(c[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")


@pytest.fixture
def criterion():
    """Record one pass/fail line for the acceptance summary, then assert."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        ok = bool(ok)
        _CRITERIA.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")
        assert ok, f"criterion {name} failed: {detail}"

    return record


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    monkeypatch.setenv("MPTOMO_WORKERS", "1")


@pytest.fixture(scope="session")
def default_scenario() -> Scenario:
    return Scenario()


@pytest.fixture(scope="session")
def default_system(default_scenario) -> TomographySystem:
    return TomographySystem(default_scenario)


@pytest.fixture(scope="session")
def default_probes(default_scenario):
    return precompute(default_scenario, workers=1)


@pytest.fixture(scope="session")
def default_cache(default_probes, tmp_path_factory):
    path = tmp_path_factory.mktemp("cache") / "default.json"
    default_probes.save(path)
    return path


# a small system for quick end-to-end tests: 12 cells of 10 cm on a coarse mesh
COARSE = dict(mesh_h=0.04, cell=0.1, margin=0.03)


@pytest.fixture(scope="session")
def coarse_scenario() -> Scenario:
    return Scenario(name="coarse", **COARSE)


@pytest.fixture(scope="session")
def coarse_probes(coarse_scenario):
    return precompute(coarse_scenario, workers=1)


def write_scenario(path, scenario: Scenario):
    path.write_text(json.dumps(scenario.to_json()))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
