import numpy as np
import pytest

RATIO = 1.0 / 3.0


@pytest.fixture(scope="session")
def ratio():
    return RATIO


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
