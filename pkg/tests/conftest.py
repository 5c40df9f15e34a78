import os
from pathlib import Path

import pytest

from rbnn.dataset import TEST_FILES, TRAIN_FILES, load_mnist

DEFAULT_MNIST = Path("/root/data/mnist")


def mnist_dir():
    d = Path(os.environ.get("RBNN_MNIST_DIR", DEFAULT_MNIST))
    if all((d / f).exists() for f in TRAIN_FILES + TEST_FILES):
        return d
    return None


@pytest.fixture(scope="session")
def mnist_path():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found; set RBNN_MNIST_DIR")
    return d


@pytest.fixture(scope="session")
def mnist_raw(mnist_path):
    return load_mnist(mnist_path)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-MNIST training, deselect with -m 'not slow'")


def write_fake_mnist(directory, n_train=240, n_test=60, seed=0):
    """Tiny IDX set in the official layout; each class lights up its own band of rows."""
    import struct

    import numpy as np

    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for (img_name, lab_name), n in ((TRAIN_FILES, n_train), (TEST_FILES, n_test)):
        labels = rng.integers(0, 10, size=n).astype(np.uint8)
        images = rng.integers(0, 60, size=(n, 28, 28)).astype(np.uint8)
        for i, c in enumerate(labels):
            images[i, 2 * c + 4: 2 * c + 7, 4:24] = 250
        (directory / img_name).write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + images.tobytes())
        (directory / lab_name).write_bytes(struct.pack(">II", 0x801, n) + labels.tobytes())
    return directory


@pytest.fixture
def fake_mnist(tmp_path):
    return write_fake_mnist(tmp_path / "mnist")
