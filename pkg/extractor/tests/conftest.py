import numpy as np
import pytest

from sbextract.generate import ProceduralGenerator, generate_tree

SMALL_GRID = [1, 2, 3, 5, 9, 17, 65]


@pytest.fixture()
def rng():
    return np.random.default_rng(7)


@pytest.fixture(scope="session")
def image_tree(tmp_path_factory):
    """A small rendered tree: 3 prompts x 2 seeds x the small grid."""
    root = tmp_path_factory.mktemp("images")
    prompts = [(i, f"fixture prompt {i}") for i in range(3)]
    generate_tree(root, prompts, SMALL_GRID, (0, 1),
                  ProceduralGenerator(resolution=48))
    return root
