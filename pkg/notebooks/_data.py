"""Locate MNIST for the demos.

Uses ``$LGLSQ_DATA`` when it holds the IDX files; otherwise writes the
5000-image sample shipped with mlxtend to a temporary directory.
"""

import os
import tempfile

import numpy as np

from lglsq.data import DATA_ENV, MNIST_FILES, encode_idx


def mnist_root():
    root = os.environ.get(DATA_ENV)
    if root and os.path.exists(os.path.join(root, MNIST_FILES["train"][0])):
        return root
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    order = np.random.default_rng(0).permutation(len(y))
    x, y = x[order].reshape(-1, 28, 28).astype(np.uint8), y[order].astype(np.uint8)
    root = os.path.join(tempfile.gettempdir(), "lglsq-mnist-sample")
    os.makedirs(root, exist_ok=True)
    parts = {"train": (x[:4000], y[:4000]), "test": (x[4000:], y[4000:])}
    for split, (img, lbl) in MNIST_FILES.items():
        for name, arr in ((img, parts[split][0]), (lbl, parts[split][1])):
            with open(os.path.join(root, name), "wb") as f:
                f.write(encode_idx(arr))
    return root
