"""MNIST ingestion (uncompressed IDX), normalisation and mini-batching."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
IMAGE_PIXELS = 28 * 28
NUM_CLASSES = 10

TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


class IdxError(ValueError):
    """Malformed IDX file.  ``path`` and ``offset`` locate the problem."""

    def __init__(self, message: str, path: str | os.PathLike, offset: int):
        super().__init__(f"{path} (offset {offset}): {message}")
        self.path = str(path)
        self.offset = offset


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class DimensionMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class RawDataset:
    images: np.ndarray  # N x 784 uint8
    labels: np.ndarray  # N uint8

    def __post_init__(self) -> None:
        if self.images.ndim != 2 or self.images.shape[1] != IMAGE_PIXELS:
            raise ValueError(f"images must be N x {IMAGE_PIXELS}, got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("image count and label count differ")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def head(self, n: int) -> RawDataset:
        return RawDataset(self.images[:n], self.labels[:n])


def _read_idx(path, magic: int, ndim: int) -> tuple[tuple[int, ...], np.ndarray]:
    data = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(data) < 4:
        raise TruncatedFileError("file shorter than the magic number", path, len(data))
    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise BadMagicError(f"unexpected magic 0x{found:08x}, wanted 0x{magic:08x}", path, 0)
    if len(data) < header:
        raise TruncatedFileError("header truncated", path, len(data))
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    n_bytes = int(np.prod(dims))
    if len(data) < header + n_bytes:
        raise TruncatedFileError(f"expected {n_bytes} data bytes, found {len(data) - header}",
                                 path, len(data))
    if len(data) > header + n_bytes:
        raise DimensionMismatchError("trailing bytes after data", path, header + n_bytes)
    return dims, np.frombuffer(data, dtype=np.uint8, offset=header, count=n_bytes)


def load_idx(path_images, path_labels) -> RawDataset:
    (n, rows, cols), pixels = _read_idx(path_images, IMAGES_MAGIC, 3)
    if rows * cols != IMAGE_PIXELS:
        raise DimensionMismatchError(f"images are {rows}x{cols}, expected 28x28", path_images, 8)
    (n_labels,), labels = _read_idx(path_labels, LABELS_MAGIC, 1)
    if n_labels != n:
        raise DimensionMismatchError(f"{n_labels} labels for {n} images", path_labels, 4)
    if labels.size and labels.max() >= NUM_CLASSES:
        bad = int(np.argmax(labels >= NUM_CLASSES))
        raise DimensionMismatchError(f"label {labels[bad]} out of range", path_labels, 8 + bad)
    return RawDataset(pixels.reshape(n, IMAGE_PIXELS), labels)


def load_mnist(mnist_dir) -> tuple[RawDataset, RawDataset]:
    """Read the four official files from ``mnist_dir``: (train, test)."""
    d = Path(mnist_dir)
    return load_idx(d / TRAIN_FILES[0], d / TRAIN_FILES[1]), load_idx(d / TEST_FILES[0], d / TEST_FILES[1])


def pixel_mean(images: np.ndarray, mode: str = "dataset") -> float:
    """The scalar subtracted before scaling.

    ``dataset`` averages every pixel of ``images``; ``half_range`` uses 127.5,
    which is what maps pixels onto exactly [-1, 1].
    """
    if mode == "dataset":
        return float(np.mean(images, dtype=np.float64))
    if mode == "half_range":
        return 127.5
    raise ValueError(f"unknown mean_mode {mode!r}")


def normalize(images: np.ndarray, mean: float) -> np.ndarray:
    return (np.asarray(images, dtype=np.float64) - mean) / 255.0 * 2.0


def one_hot(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass(frozen=True)
class Examples:
    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def targets(self) -> np.ndarray:
        return one_hot(self.labels)


@dataclass(frozen=True)
class DataSplit:
    train: Examples
    validation: Examples
    test: Examples
    mean: float


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    index: np.ndarray  # rows of the training set


def make_split(train_raw: RawDataset, test_raw: RawDataset, validation_size: int = 10_000,
               mean_mode: str = "dataset") -> DataSplit:
    """Hold out the last ``validation_size`` training images, in order, for validation.

    The normalisation mean is taken over the remaining training images only
    and reused unchanged for validation and test.
    """
    n = len(train_raw)
    if not 0 < validation_size < n:
        raise ValueError(f"validation_size must be in (0, {n})")
    cut = n - validation_size
    mean = pixel_mean(train_raw.images[:cut], mean_mode)
    return DataSplit(
        train=Examples(normalize(train_raw.images[:cut], mean), train_raw.labels[:cut].astype(np.int64)),
        validation=Examples(normalize(train_raw.images[cut:], mean), train_raw.labels[cut:].astype(np.int64)),
        test=Examples(normalize(test_raw.images, mean), test_raw.labels.astype(np.int64)),
        mean=mean,
    )


def batches(split: DataSplit, batch_size: int, seed: int, epoch: int, stream: int = 0) -> Iterator[Batch]:
    """Shuffled training mini-batches; the order depends only on (seed, epoch, stream).

    ``stream`` separates otherwise identical epochs, e.g. across recursions.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    train = split.train
    order = np.random.default_rng([seed, stream, epoch]).permutation(len(train))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Batch(train.inputs[idx], one_hot(train.labels[idx]), idx)
