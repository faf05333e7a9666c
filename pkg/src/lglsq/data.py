"""Raw-file readers for MNIST (IDX) and CIFAR-10 (binary batches).

Images come back as float32 NCHW arrays normalized with fixed per-channel
constants; labels as int64.
"""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError

MNIST_MEAN = (0.1307,)
MNIST_STD = (0.3081,)
# standard CIFAR-10 training-set channel statistics
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}

DATA_ENV = "LGLSQ_DATA"
INPUT_SHAPE_BY_DATASET = {"mnist": (1, 28, 28), "cifar10": (3, 32, 32)}


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str
    name: str = ""
    classes: int = 10

    def __len__(self):
        return len(self.labels)

    def subset(self, n, seed=0):
        """Random subset of ``n`` examples (the whole set if ``n`` is None or too big)."""
        if n is None or n >= len(self):
            return self
        idx = np.sort(np.random.default_rng(seed).permutation(len(self))[:n])
        return Dataset(self.images[idx], self.labels[idx], self.split, self.name, self.classes)

    def save(self, path):
        np.savez(path, images=self.images, labels=self.labels,
                 meta=np.array([self.split, self.name, str(self.classes)]))

    @classmethod
    def load(cls, path):
        with np.load(path) as f:
            split, name, classes = f["meta"].tolist()
            return cls(f["images"], f["labels"], split, name, int(classes))


def data_root(path=None):
    return path or os.environ.get(DATA_ENV, "data")


def normalize(raw_u8, mean, std):
    """uint8 NCHW -> float32 with per-channel (x/255 - mean)/std."""
    x = raw_u8.astype(np.float32) / np.float32(255.0)
    m = np.asarray(mean, dtype=np.float32).reshape(1, -1, 1, 1)
    s = np.asarray(std, dtype=np.float32).reshape(1, -1, 1, 1)
    return (x - m) / s


def _read_bytes(path):
    if not os.path.exists(path) and os.path.exists(path + ".gz"):
        path = path + ".gz"
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw, expected_magic):
    """Decode an IDX byte string into a uint8 array."""
    if len(raw) < 4:
        raise FormatError("IDX file shorter than its magic number", offset=len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise FormatError(f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"IDX header truncated, need {header} bytes", offset=len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    n = int(np.prod(dims))
    if len(raw) - header < n:
        raise FormatError(f"IDX payload truncated: {len(raw) - header} of {n} bytes", offset=len(raw))
    if len(raw) - header > n:
        raise FormatError(f"IDX file has {len(raw) - header - n} trailing bytes", offset=header + n)
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def encode_idx(arr):
    """uint8 array -> IDX bytes (magic 0x0000080N for N dims)."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def load_mnist(root=None, split="train"):
    root = data_root(root)
    img_name, lbl_name = MNIST_FILES[split]
    images = parse_idx(_read_bytes(os.path.join(root, img_name)), IDX_IMAGES_MAGIC)
    labels = parse_idx(_read_bytes(os.path.join(root, lbl_name)), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"MNIST {split}: {images.shape[0]} images but {labels.shape[0]} labels")
    x = normalize(images[:, None, :, :], MNIST_MEAN, MNIST_STD)
    return Dataset(x, labels.astype(np.int64), split, "mnist")


def parse_cifar_batch(raw):
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"CIFAR batch size {len(raw)} is not a multiple of {CIFAR_RECORD}",
                          offset=len(raw) - len(raw) % CIFAR_RECORD)
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise FormatError(f"CIFAR label {labels[bad[0]]} out of range", offset=int(bad[0]) * CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32), labels


def _cifar_dir(root):
    sub = os.path.join(root, "cifar-10-batches-bin")
    return sub if os.path.isdir(sub) else root


def load_cifar10(root=None, split="train"):
    root = _cifar_dir(data_root(root))
    xs, ys = [], []
    for name in CIFAR_FILES[split]:
        with open(os.path.join(root, name), "rb") as f:
            x, y = parse_cifar_batch(f.read())
        xs.append(x)
        ys.append(y)
    x = normalize(np.concatenate(xs), CIFAR_MEAN, CIFAR_STD)
    return Dataset(x, np.concatenate(ys), split, "cifar10")


LOADERS = {"mnist": load_mnist, "cifar10": load_cifar10}


def load_dataset(name, root=None, split="train", subset=None, seed=0):
    try:
        loader = LOADERS[name]
    except KeyError:
        raise ConfigError(f"unknown dataset {name!r}; choose from {sorted(LOADERS)}") from None
    return loader(root, split).subset(subset, seed)


def random_crop_flip(images, rng, pad=4):
    """Per-image random crop from a zero-padded copy plus horizontal flip."""
    n, _, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, n)
    dx = rng.integers(0, 2 * pad + 1, n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(images)
    for i in range(n):
        crop = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def iterate_batches(ds, batch_size, rng=None, augment=False):
    """Yield (images, labels) minibatches; shuffled when ``rng`` is given."""
    n = len(ds)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        x = ds.images[idx]
        if augment:
            x = random_crop_flip(x, rng)
        yield x, ds.labels[idx]
