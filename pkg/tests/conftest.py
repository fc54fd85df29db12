import numpy as np
import pytest

from stepbudget.dataset import GridSpec, build_timestep_grid

PAPER_GRID_STEPS = [1, 2, 3, 5, 9, 17, 22, 27, 33, 42, 65, 129]


@pytest.fixture(scope="session")
def paper_grid():
    return build_timestep_grid(GridSpec(max_i=8, extras=frozenset({22, 27, 42}),
                                        include_one=True))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
