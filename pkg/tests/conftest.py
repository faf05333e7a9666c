"""Shared fixtures.

MNIST comes from ``$LGLSQ_DATA`` when it holds the IDX files. Otherwise a
stand-in root is written from the 5000-image sample bundled with mlxtend
(4000 train / 1000 test, shuffled with a fixed seed).
"""

import os

import numpy as np
import pytest

from lglsq.data import DATA_ENV, MNIST_FILES, encode_idx, load_dataset

N_TRAIN = 4000


def _has_mnist(root):
    return root and all(os.path.exists(os.path.join(root, f)) or
                        os.path.exists(os.path.join(root, f + ".gz"))
                        for pair in MNIST_FILES.values() for f in pair)


def _write_sample_mnist(root):
    mlx = pytest.importorskip("mlxtend.data", reason="no MNIST in $LGLSQ_DATA and mlxtend missing")
    x, y = mlx.mnist_data()
    order = np.random.default_rng(0).permutation(len(y))
    x = x[order].reshape(-1, 28, 28).astype(np.uint8)
    y = y[order].astype(np.uint8)
    parts = {"train": (x[:N_TRAIN], y[:N_TRAIN]), "test": (x[N_TRAIN:], y[N_TRAIN:])}
    for split, (img_name, lbl_name) in MNIST_FILES.items():
        xi, yi = parts[split]
        with open(os.path.join(root, img_name), "wb") as f:
            f.write(encode_idx(xi))
        with open(os.path.join(root, lbl_name), "wb") as f:
            f.write(encode_idx(yi))
    return root


@pytest.fixture(scope="session")
def mnist_root(tmp_path_factory):
    env = os.environ.get(DATA_ENV)
    if _has_mnist(env):
        return env
    return _write_sample_mnist(str(tmp_path_factory.mktemp("mnist")))


@pytest.fixture(scope="session")
def canonical_mnist():
    env = os.environ.get(DATA_ENV)
    if not _has_mnist(env):
        pytest.skip("canonical MNIST files not found in $LGLSQ_DATA")
    return env


@pytest.fixture(scope="session")
def mnist(mnist_root):
    return load_dataset("mnist", mnist_root, "train"), load_dataset("mnist", mnist_root, "test")


@pytest.fixture(scope="session")
def mnist_small(mnist):
    train, test = mnist
    return train.subset(512, 0), test.subset(256, 0)
