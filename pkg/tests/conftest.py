import numpy as np
import pytest

from bergman_lab.geometry import build_model


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def fs():
    return build_model("FubiniStudyCP1")


@pytest.fixture(scope="session")
def perturbed():
    return build_model("PerturbedCP1", perturbation=0.2)


@pytest.fixture(scope="session")
def torus():
    return build_model("FlatTorus", torus_modulus=1j)


def sphere_points(rng, n, s_max=0.98):
    s = rng.uniform(0.0, s_max, n)
    theta = rng.uniform(0.0, 2 * np.pi, n)
    return np.sqrt(s / (1 - s)) * np.exp(1j * theta)
