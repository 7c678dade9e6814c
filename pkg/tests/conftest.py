import numpy as np
import pytest

from flowreg.spectral import Grid2

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid16():
    return Grid2.square(16)


@pytest.fixture(scope="session")
def grid32():
    return Grid2.square(32)


def smooth_random(grid, rng, lead=(), kmax=4):
    """Random band-limited real field with wavenumbers |k_i| <= kmax."""
    fh = rng.standard_normal((*lead, grid.n[0], grid.n[1] // 2 + 1)) + 1j * rng.standard_normal(
        (*lead, grid.n[0], grid.n[1] // 2 + 1)
    )
    k1, k2 = grid._k
    mask = (np.abs(k1) <= kmax) & (np.abs(k2) <= kmax)
    return grid.ifft(fh * mask) * grid.n[0] * grid.n[1] / (2 * kmax + 1) ** 2
