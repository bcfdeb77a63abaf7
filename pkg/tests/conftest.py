import hypothesis
import numpy as np
import pytest

from hamdelay.geometry import PhaseSpace

hypothesis.settings.register_profile(
    "default", max_examples=50, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("default")


@pytest.fixture
def torus():
    return PhaseSpace(1, "torus")


@pytest.fixture
def plane():
    return PhaseSpace(1, "plane")


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
