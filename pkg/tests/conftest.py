import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lfssd.data import synthesize_blobs  # noqa: E402
from lfssd.model import ModelSpec, init_model  # noqa: E402


@pytest.fixture
def small_spec():
    return ModelSpec((4, 6, 5, 3), init_seed=7)


@pytest.fixture
def small_theta(small_spec):
    theta = init_model(small_spec)
    rng = np.random.default_rng(0)
    # non-zero biases so bias gradients are exercised too
    return theta.with_values(theta.values + 0.1 * rng.normal(size=len(theta)))


@pytest.fixture
def blobs():
    return synthesize_blobs(3, 40, 4, 6.0, seed=2)
