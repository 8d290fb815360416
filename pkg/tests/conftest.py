import numpy as np
import pytest

from hadamard_lab.geometry import BoundaryProfile, DomainSpec, SideCondition
from hadamard_lab.mesh import ReferenceGrid


def strip(T=1.0, R=1.0, bottom=None):
    return DomainSpec(T, R, bottom or BoundaryProfile.flat(), SideCondition.PERIODIC)


def square(bottom=None):
    return DomainSpec(1.0, 1.0, bottom or BoundaryProfile.flat(), SideCondition.DIRICHLET)


def loglog_slope(d, q):
    return float(np.polyfit(np.log(d), np.log(np.abs(q)), 1)[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def coarse_grid():
    return ReferenceGrid(16, 16, 1.0)


ACCEPTANCE: list = []


def record(label, ok, detail=""):
    """Log one acceptance line; the test asserts ``ok`` afterwards."""
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
