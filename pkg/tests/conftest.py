import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h=16, w=20, c=3, dtype=np.float64):
    """Random image in [0, 1]; float64 by default so hand-computed
    expected values are exact."""
    return rng.random((h, w, c)).astype(dtype)
