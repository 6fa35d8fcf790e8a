import os

import numpy as np
import pytest

from isbe import data as data_mod
from isbe.synthetic import write_mnist_layout

CACHE_DIR = os.path.join(os.path.dirname(__file__), os.pardir, ".data-synth")


def _loadable(path) -> bool:
    try:
        data_mod.load_mnist(path, "train")
        data_mod.load_mnist(path, "test")
        return True
    except (FileNotFoundError, Exception):
        return False


@pytest.fixture(scope="session")
def data_dir():
    """Directory with MNIST-layout IDX files.

    Uses ISBE_DATA_DIR when it points at loadable files (e.g. the official
    corpus); otherwise generates and caches a synthetic stand-in."""
    env = os.environ.get("ISBE_DATA_DIR")
    if env and _loadable(env):
        return env
    cache = os.path.abspath(CACHE_DIR)
    if not _loadable(cache):
        write_mnist_layout(cache, train_n=12000, test_n=10000, seed=123)
    return cache


@pytest.fixture(scope="session")
def official_data_dir():
    """The real 60000/10000 corpus, or None when unavailable."""
    env = os.environ.get("ISBE_DATA_DIR")
    if env and _loadable(env) and len(data_mod.load_mnist(env, "train")) == 60000:
        return env
    return None


@pytest.fixture(scope="session")
def splits(data_dir):
    """(train, val, test) Datasets from the resolved data directory."""
    full = data_mod.load_mnist(data_dir, "train")
    test = data_mod.load_mnist(data_dir, "test")
    train, val = data_mod.split_fraction(full, min(1000, len(full) // 10), seed=11)
    return train, val, test


@pytest.fixture
def rng():
    return np.random.default_rng(0)
