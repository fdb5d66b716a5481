import math

import numpy as np
import pytest

from lcphase.grid import Grid
from lcphase.phase import MU_STAR_CACHE

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid9():
    return Grid(9, 1.0)


@pytest.fixture(scope="session")
def grid17():
    return Grid(17, 1.0)


@pytest.fixture(scope="session")
def grid33():
    return Grid(33, 1.0)


@pytest.fixture(scope="session")
def mustar_5_1(grid17):
    """mu*(q=5, tau=1) on the reference grid, shared by every test that needs it."""
    return MU_STAR_CACHE.get(grid17, 5.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def kappa_at(ratio, mu):
    return math.sqrt(ratio * mu)
