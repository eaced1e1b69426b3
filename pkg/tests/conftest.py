import math
from importlib import resources

import pytest
from hypothesis import HealthCheck, settings

from gcnsim import energy
from gcnsim.model import load_scenario

settings.register_profile(
    "gcnsim", deadline=None, derandomize=True, print_blob=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("gcnsim")

# criterion number -> (title, passed); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool]] = {}

SETTLED: list = []


def example_path():
    return resources.files("gcnsim") / "scenarios" / "two_gcs.json"


@pytest.fixture
def two_gcs():
    return load_scenario(example_path())


@pytest.fixture(autouse=True, scope="session")
def _conservation_watch():
    """Every ledger cell settled anywhere in the session must conserve energy."""
    original = energy.EnergyLedger.settle

    def settle(self, gcs_id, slot, demand, generation, provisioned):
        cell = original(self, gcs_id, slot, demand, generation, provisioned)
        lhs = cell.residual_before + cell.provisioned + cell.on_grid - cell.demand
        rhs = cell.residual_after + cell.wasted
        assert math.isclose(lhs, rhs, rel_tol=0, abs_tol=1e-12), (cell, lhs, rhs)
        SETTLED.append(cell)
        return cell

    energy.EnergyLedger.settle = settle
    yield
    energy.EnergyLedger.settle = original


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
