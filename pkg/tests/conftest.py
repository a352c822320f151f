import numpy as np
import pytest

from vecsim import rngs
from vecsim.autoencoder import AEModel, init_model
from vecsim.dataset import make_dataset, synthetic_movielens


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_records():
    return synthetic_movielens(
        np.random.default_rng(777), n_users=120, n_movies=60, zipf_exponent=0.9,
        min_ratings=10, mean_extra_ratings=15.0,
    )


@pytest.fixture(scope="session")
def small_dataset(small_records):
    return make_dataset(small_records)


def tiny_model(seed=0, input_dim=3, hidden_dim=2) -> AEModel:
    return init_model(np.random.default_rng(seed), input_dim, hidden_dim)


@pytest.fixture
def stream():
    return rngs.stream
