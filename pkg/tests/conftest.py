import numpy as np
import pytest

from heatpoint.forward import assemble_observation_matrix
from heatpoint.geometry import Domain, build_mesh, make_observation_plan


@pytest.fixture(scope="session")
def domain():
    return Domain(1.0)


@pytest.fixture(scope="session")
def mesh(domain):
    return build_mesh(domain, 0.125)


@pytest.fixture(scope="session")
def plan10(domain):
    return make_observation_plan(domain, 10, fixed_time=1.0)


@pytest.fixture(scope="session")
def A10(mesh, plan10):
    return assemble_observation_matrix(mesh, plan10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
