from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_bumps(shape=(32, 32), seed=0, count=4):
    """Sum of a few broad Gaussian bumps: a smooth test image."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    z = np.zeros(shape)
    for _ in range(count):
        cy, cx = rng.uniform(4, shape[0] - 4), rng.uniform(4, shape[1] - 4)
        w, a = rng.uniform(2.5, 5.0), rng.uniform(0.3, 1.0)
        z += a * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * w * w))
    return z
