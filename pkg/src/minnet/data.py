"""MNIST IDX files, labelled datasets, splitting / batching, and the XOR and parity sets."""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE

IMAGE_MAGIC = 2051  # 0x00000803: unsigned bytes, rank 3
LABEL_MAGIC = 2049  # 0x00000801: unsigned bytes, rank 1

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IdxFormatError(ValueError):
    pass


def _parse_idx(raw, magic, rank):
    if len(raw) < 4 + 4 * rank:
        raise IdxFormatError(f"truncated header: {len(raw)} bytes")
    found = struct.unpack(">i", raw[:4])[0]
    if found != magic:
        raise IdxFormatError(f"bad magic number {found} (expected {magic})")
    dims = struct.unpack(f">{rank}i", raw[4:4 + 4 * rank])
    expected = int(np.prod(dims))
    payload = raw[4 + 4 * rank:]
    if len(payload) != expected:
        raise IdxFormatError(
            f"payload size mismatch: expected {expected} bytes for dims {dims}, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def parse_idx_images(raw):
    """Image file bytes -> float64 array [N x rows x cols] with raw values 0..255."""
    return _parse_idx(raw, IMAGE_MAGIC, 3).astype(DTYPE)


def parse_idx_labels(raw, num_classes=10):
    labels = _parse_idx(raw, LABEL_MAGIC, 1).astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise IdxFormatError(f"label {labels[bad]} at index {bad} is outside [0, {num_classes})")
    return labels


def encode_idx_images(images):
    images = np.asarray(images)
    header = struct.pack(">4i", IMAGE_MAGIC, *images.shape)
    return header + np.asarray(images, dtype=np.uint8).tobytes()


def encode_idx_labels(labels):
    labels = np.asarray(labels)
    return struct.pack(">2i", LABEL_MAGIC, labels.shape[0]) + labels.astype(np.uint8).tobytes()


def write_idx_fixture(directory, images, labels, prefix="train"):
    """Write a small images/labels pair using the MNIST file names (test fixtures)."""
    os.makedirs(directory, exist_ok=True)
    stem = "t10k" if prefix == "test" else "train"
    with open(os.path.join(directory, f"{stem}-images-idx3-ubyte"), "wb") as f:
        f.write(encode_idx_images(images))
    with open(os.path.join(directory, f"{stem}-labels-idx1-ubyte"), "wb") as f:
        f.write(encode_idx_labels(labels))


def normalize_images(images, flatten=False):
    out = np.asarray(images, dtype=DTYPE) / 255.0
    return out.reshape(out.shape[0], -1) if flatten else out


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes), dtype=DTYPE)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass
class LabeledDataset:
    """Samples paired with targets.

    ``label`` holds integer class indices for classification sets, or a float
    target matrix for regression-style sets such as XOR under MSE.
    """

    data: np.ndarray
    label: np.ndarray
    num_classes: int = None

    def __post_init__(self):
        if len(self.data) != len(self.label):
            raise ValueError(f"{len(self.data)} samples but {len(self.label)} labels")
        if self.num_classes is not None and len(self.label):
            if self.label.min() < 0 or self.label.max() >= self.num_classes:
                raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.data)

    def one_hot(self):
        return one_hot(self.label, self.num_classes)

    def subset(self, index):
        return LabeledDataset(self.data[index], self.label[index], self.num_classes)

    def head(self, n):
        return self.subset(slice(0, n))


def load_mnist(data_dir, flatten=True):
    """(train, test) LabeledDatasets with pixels scaled to [0, 1].

    Images are [N x 784] when ``flatten`` else [N x 1 x 28 x 28].
    """
    missing = [name for name in MNIST_FILES.values()
               if not os.path.exists(os.path.join(data_dir, name))]
    if missing:
        raise FileNotFoundError(f"missing MNIST files in {data_dir}: {', '.join(missing)}")

    def read(key):
        with open(os.path.join(data_dir, MNIST_FILES[key]), "rb") as f:
            return f.read()

    sets = []
    for part in ("train", "test"):
        images = normalize_images(parse_idx_images(read(f"{part}_images")))
        images = images.reshape(len(images), -1) if flatten else images[:, None]
        sets.append(LabeledDataset(images, parse_idx_labels(read(f"{part}_labels")), 10))
    return tuple(sets)


def shuffle(ds, rng):
    return ds.subset(rng.permutation(len(ds)))


def split_data(ds, p):
    """First floor(p*N) samples and the rest; p outside (0, 1] falls back to 0.9."""
    p = p if 0 < p <= 1 else 0.9
    cut = int(np.floor(p * len(ds)))
    return ds.subset(slice(0, cut)), ds.subset(slice(cut, len(ds)))


def split_torch(train, rng, rate=0.75):
    """Shuffle once, then keep the first ``rate`` for training, the rest for validation."""
    return split_data(shuffle(train, rng), rate)


def split_matlab(train, test):
    """Fixed index split over the concatenated 70000 samples.

    Training 1..45000, validation 45001..60000, test 60001..70000 (1-based,
    non-overlapping); with the standard files this is train[:45000],
    train[45000:], test.
    """
    both = LabeledDataset(np.concatenate([train.data, test.data]),
                          np.concatenate([train.label, test.label]), train.num_classes)
    return both.subset(slice(0, 45000)), both.subset(slice(45000, 60000)), both.subset(slice(60000, 70000))


def split_tf(train, validation_size=5000):
    """First ``validation_size`` samples for validation, the rest for training."""
    return train.subset(slice(validation_size, len(train))), train.subset(slice(0, validation_size))


def make_xor_dataset(encoding="zero-one"):
    """The four XOR points. ``shifted`` moves inputs and targets by -0.5."""
    x = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=DTYPE)
    y = np.array([[0], [1], [1], [0]], dtype=DTYPE)
    if encoding == "shifted":
        x, y = x - 0.5, y - 0.5
    elif encoding != "zero-one":
        raise ValueError(f"unknown XOR encoding {encoding!r}")
    return LabeledDataset(x, y)


def parity(bits):
    """1 where the row has an odd number of ones, via -prod((-1)^x) > 0."""
    bits = np.asarray(bits)
    return (-np.prod((-1.0) ** bits, axis=-1) > 0).astype(np.int64)


def all_bit_patterns(n):
    """All 2^n boolean rows, in binary counting order with x1 as the most significant bit."""
    codes = np.arange(2 ** n)
    return ((codes[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(DTYPE)


def make_parity_dataset(n, mode="exhaustive", m=None, rng=None):
    if n < 1:
        raise ValueError(f"parity arity must be >= 1, got {n}")
    if mode == "exhaustive":
        x = all_bit_patterns(n)
    elif mode == "random":
        x = rng.integers(0, 2, size=(m, n)).astype(DTYPE)
    else:
        raise ValueError(f"unknown parity mode {mode!r}")
    return LabeledDataset(x, parity(x), 2)


class BatchCursor:
    """Slides over a shuffled copy of ``ds`` and reshuffles when an epoch is used up.

    A request that runs past the end of the epoch takes the remaining samples
    plus the start of a freshly shuffled epoch, so every sample is seen once
    per epoch.
    """

    def __init__(self, ds, rng):
        self.ds = ds
        self.rng = rng
        self.epochs_completed = 0
        self._order = rng.permutation(len(ds))
        self._pos = 0

    def next_batch(self, size):
        n = len(self.ds)
        if size < 1:
            raise ValueError(f"batch size must be >= 1, got {size}")
        idx = []
        need = size
        while need > 0:
            take = self._order[self._pos:self._pos + need]
            idx.append(take)
            self._pos += len(take)
            need -= len(take)
            if self._pos >= n:
                self.epochs_completed += 1
                self._order = self.rng.permutation(n)
                self._pos = 0
        return self.ds.subset(np.concatenate(idx))


def next_batch(ds, size, cursor):
    """Functional form: (batch, cursor).  ``cursor`` is a BatchCursor over ``ds``."""
    if cursor.ds is not ds:
        raise ValueError("cursor belongs to a different dataset")
    return cursor.next_batch(size), cursor
