import os
from pathlib import Path

import numpy as np
import pytest

from modelspaces import Dataset, load_idx

REPO_ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = Path(os.environ.get("MODELSPACES_MNIST_DIR", REPO_ROOT / "data" / "mnist"))

requires_mnist = pytest.mark.skipif(
    not (MNIST_DIR / "images-idx3-ubyte").exists(),
    reason=f"MNIST corpus missing under {MNIST_DIR}; run scripts/fetch_mnist.py",
)


@pytest.fixture(scope="session")
def mnist_pool():
    if not (MNIST_DIR / "images-idx3-ubyte").exists():
        pytest.skip("MNIST corpus not fetched")
    return load_idx(MNIST_DIR / "images-idx3-ubyte", MNIST_DIR / "labels-idx1-ubyte")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def balanced_dataset(n_classes=10, per_class=10, n_features=4, seed=0):
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n_classes * per_class, n_features))
    labels = np.repeat(np.arange(n_classes), per_class)
    return Dataset(features, labels, n_classes)
