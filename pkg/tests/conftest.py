import numpy as np
import pytest

from bfb.model import PhysicalParams, random_state
from bfb.spectral import Parity, SpectralField, _parity_array, build_grid, to_physical, to_spectral


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance runs")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid8():
    return build_grid(8, 8, 8, 1.0)


@pytest.fixture
def grid16():
    return build_grid(16, 16, 16, 1.0)


@pytest.fixture
def params():
    return PhysicalParams(nu=1.0, kappa=1.0, a=1.0, alpha=2.0, L=1.0)


def random_field(grid, rng, parity, dealiased=True):
    """Random real-valued field with the given parity."""
    c = to_spectral(rng.standard_normal(grid.shape))
    c = _parity_array(c, parity.value, grid)
    if dealiased:
        c = c * grid.mask
    return SpectralField(c, parity, grid)


def make_state(grid, rng, energy=1.0):
    return random_state(grid, rng, energy, k0=2 * np.pi)


# acceptance lines keyed by criterion number, printed at session end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
