import numpy as np
import pytest

from edgecalc.forms import random_form, real_part
from edgecalc.grid import make_model_grid, random_field


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture(scope="session")
def grid():
    return make_model_grid(T=12.0, N_t=128, N_sigma=16, N_u=16)


@pytest.fixture(scope="session")
def small_grid():
    return make_model_grid(T=12.0, N_t=64, N_sigma=8, N_u=8)


@pytest.fixture(scope="session")
def wide_grid():
    return make_model_grid(T=20.0, N_t=256, N_sigma=16, N_u=8)


@pytest.fixture
def make_field(rng):
    """Seeded band-limited field factory; keyword arguments go to random_field."""
    def factory(grid, **kwargs):
        return random_field(grid, rng, **kwargs)
    return factory


@pytest.fixture
def make_real_one_form(rng):
    def factory(grid, amplitude=1e-3, t_center=0.0, t_width=1.0):
        return real_part(random_form(grid, rng, 1, t_center=t_center, t_width=t_width, amplitude=amplitude))
    return factory
