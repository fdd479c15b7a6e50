import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridbem.geometry import NestedHeadModel, generate_sphere_surface

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("default")

THREE_RADII = (0.087, 0.092, 0.1)
THREE_SIGMA = (0.33, 0.0125, 0.33)


@pytest.fixture(scope="session")
def octahedron():
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    t = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return v, t


@pytest.fixture(scope="session")
def sphere1():
    return generate_sphere_surface(1.0, 1)


@pytest.fixture(scope="session")
def sphere2():
    return generate_sphere_surface(1.0, 2)


@pytest.fixture(scope="session")
def three_layer_l1():
    return NestedHeadModel(tuple(generate_sphere_surface(r, 1) for r in THREE_RADII), THREE_SIGMA)


@pytest.fixture(scope="session")
def three_layer_l2():
    return NestedHeadModel(tuple(generate_sphere_surface(r, 2) for r in THREE_RADII), THREE_SIGMA)
