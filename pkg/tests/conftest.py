import numpy as np
import pytest

from uripr.measures import FamilySpec, make_family, make_measure
from uripr.projection import greedy_project


@pytest.fixture(scope="session")
def gauss_pair():
    return make_family(FamilySpec("gauss-pair"))


@pytest.fixture(scope="session")
def cauchy(gauss_pair):
    return make_measure("cauchy", (0.0, 1.0), gauss_pair.grid)


@pytest.fixture(scope="session")
def cauchy_trace(gauss_pair, cauchy):
    return greedy_project(cauchy, gauss_pair, k_max=200)


@pytest.fixture(scope="session")
def bern21():
    return make_family(FamilySpec("bernoulli", tuple(np.linspace(0.25, 0.75, 21))))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
