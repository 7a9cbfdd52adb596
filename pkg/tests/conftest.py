import numpy as np
import pytest

from lethe import model, streams
from lethe.engine import HyperParams


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config():
    # 4 classes, narrow trunk: big enough to learn blobs, small enough
    # that every test using it stays well under a second.
    return model.NetConfig(input_dim=2, hidden_dims=(8, 8), num_classes=4, embed_dim=4, init_seed=3)


@pytest.fixture
def tiny_tasks():
    skel = streams.task_distribution(4, 2)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([1, 0])))
    return streams.make_gaussian_tasks(skel, 30, 10, 0.06, rng)


@pytest.fixture
def quick_hyper():
    return HyperParams(epochs_per_task=2, batch_size=16, buffer_batch_size=16)


def unit_rows(rng, n, k):
    z = rng.standard_normal((n, k))
    return z / np.linalg.norm(z, axis=1, keepdims=True)
