import numpy as np
import pytest

from sdmc.config import load_preset


@pytest.fixture(scope="session")
def preset():
    return load_preset()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

