import numpy as np
import pytest

from sqglab import GridSpec
from sqglab import spectral as sp
from sqglab.forcing import RngStream, random_field


def single_mode(grid: GridSpec, kx: int, ky: int, parity: str = "cos", amp: float = 1.0):
    """amp * cos(k.x) or amp * sin(k.x) as a coefficient array."""
    N = grid.cutoff
    c = sp.zero_field(grid)
    if parity == "cos":
        c[N + ky, N + kx] = 0.5 * amp
        c[N - ky, N - kx] = 0.5 * amp
    else:
        c[N + ky, N + kx] = -0.5j * amp
        c[N - ky, N - kx] = 0.5j * amp
    return c


@pytest.fixture
def grid8():
    return GridSpec(8)


@pytest.fixture
def grid16():
    return GridSpec(16)


def random_fields(grid, n, seed=0, band=None, rms=1.0):
    rng = RngStream(seed, 0)
    return [random_field(grid, rng, band=band, rms=rms) for _ in range(n)]
