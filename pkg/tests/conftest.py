import numpy as np
import pytest

from nfdm_lab.signal import LinkConfig


@pytest.fixture
def link():
    return LinkConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
