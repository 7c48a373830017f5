import numpy as np
import pytest

from wgtomo.geometry import build_disk


@pytest.fixture(scope="session")
def cs24():
    return build_disk(1.0, 24, 48)


@pytest.fixture(scope="session")
def cs16():
    return build_disk(1.0, 16, 32)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
