import numpy as np
import pytest

from toric_bfield.polytope import build_polytope

SQUARE_NORMALS = [(1, 0), (0, 1), (-1, 0), (0, -1)]
SIMPLEX_NORMALS = [(1, 0), (0, 1), (-1, -1)]
CUBE_NORMALS = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (-1, 0, 0), (0, -1, 0), (0, 0, -1)]


@pytest.fixture(scope="session")
def square():
    return build_polytope(SQUARE_NORMALS, [0, 0, -1, -1])


@pytest.fixture(scope="session")
def simplex():
    return build_polytope(SIMPLEX_NORMALS, [0, 0, -1])


@pytest.fixture(scope="session")
def interval():
    return build_polytope([(1,), (-1,)], [0, -1])


@pytest.fixture(scope="session")
def cube():
    return build_polytope(CUBE_NORMALS, [0, 0, 0, -1, -1, -1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
