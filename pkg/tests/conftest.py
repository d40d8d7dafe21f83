import math
import os

import numpy as np
import pytest

from twoscale.precompute import ConductivityInterpolator, cached_table

CACHE = os.path.join(os.path.dirname(__file__), ".cache")

_CRITERIA = []


class MaxwellGarnett:
    """Cheap smooth stand-in for K(h): 0.1 (1 - phi) / (1 + phi), phi = pi (r+h)^2."""

    def __init__(self, r=0.25, k=0.1):
        self.r = r
        self.k = k

    def tensor(self, h):
        h = np.asarray(h, dtype=float)
        phi = math.pi * (self.r + h) ** 2
        val = self.k * (1 - phi) / (1 + phi)
        return val[..., None, None] * np.eye(2)


@pytest.fixture(scope="session")
def mg():
    return MaxwellGarnett()


@pytest.fixture(scope="session")
def mg_table_interp():
    """Interpolator fitted to Maxwell-Garnett samples (no cell solves)."""
    h = np.linspace(-0.245, 0.245, 81)
    K = MaxwellGarnett().tensor(h)
    comps = np.stack([K[:, 0, 0], K[:, 0, 1], K[:, 1, 1]], axis=1)
    return ConductivityInterpolator("quadratic").fit(h, comps)


def fine_table():
    return cached_table(CACHE, -0.245, 0.245, 320, 5e-3, 0.1, 0.25)


def coarse_cell_table():
    return cached_table(CACHE, -0.245, 0.245, 320, 2e-2, 0.1, 0.25)


@pytest.fixture(scope="session")
def table_fine():
    return fine_table()


@pytest.fixture(scope="session")
def table_coarse_cell():
    return coarse_cell_table()


@pytest.fixture
def criterion():
    """Record one acceptance line; printed again in the terminal summary."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        _CRITERIA.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA):
        terminalreporter.write_line(line)
