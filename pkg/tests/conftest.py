import numpy as np
import pytest

from ftl import dataset as dataset_mod
from ftl.network import NetworkConfig, init_params


@pytest.fixture(scope="session")
def small_dataset():
    """A quick 12-class imbalanced dataset shared across tests."""
    cfg = dataset_mod.GeneratorConfig(
        n_regular=6,
        n_ur=6,
        samples_per_regular=60,
        samples_per_ur=5,
        input_dim=12,
        shared_cov_rank=4,
        seed=42,
    )
    return dataset_mod.generate(cfg)


@pytest.fixture
def tiny_params():
    """A small network for gradient and forward tests."""
    cfg = NetworkConfig(
        input_dim=5, n_classes=4, g_dim=3, f_dim=3, enc_hidden=(6,), dec_hidden=(6,), filt_hidden=(6,)
    )
    return init_params(cfg, seed=9)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
