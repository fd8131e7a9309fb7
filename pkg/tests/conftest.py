from __future__ import annotations

import numpy as np
import pytest

from rwp_toolbox.data import Split, make_blobs
from rwp_toolbox.model import Batch, Model, build_cnn, build_mlp, init_uniform


def random_batch(model: Model, n: int, seed: int) -> Batch:
    rng = np.random.default_rng(seed)
    inputs = rng.standard_normal((n, *model.input_shape))
    labels = rng.integers(0, model.class_count, n)
    return Batch(inputs, labels)


@pytest.fixture
def mlp() -> Model:
    return build_mlp([6, 5], input_dim=4, class_count=3)


@pytest.fixture
def cnn() -> Model:
    return build_cnn([3], kernel=3, input_shape=(2, 8, 8), class_count=3)


@pytest.fixture
def mlp_params(mlp: Model) -> np.ndarray:
    return init_uniform(mlp, seed=0)


@pytest.fixture
def blobs():
    """Small, well separated 3-class problem (train, test)."""
    train = make_blobs(3, 4, 20, 0.5, seed=0)
    test = make_blobs(3, 4, 20, 0.5, seed=1, split=Split.TEST)
    return train, test
