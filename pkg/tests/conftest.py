import numpy as np
import pytest

from fedgen.learner import ModelShape, init_params
from fedgen.worldgen import make_world, sample_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_world():
    return make_world(num_classes=4, num_domains=1, feature_dim=8, mean_radius=4.0, within_std=1.0, seed=3)


@pytest.fixture(scope="session")
def small_data(small_world):
    return sample_dataset(small_world, 25, seed=11)


@pytest.fixture
def linear_params():
    return init_params(ModelShape(8, 0, 4), seed=5)
