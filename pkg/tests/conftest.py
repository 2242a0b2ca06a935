import os
from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = REPO_ROOT / "data" / "mnist"

os.environ.setdefault("MIXPREC_DATA_DIR", str(MNIST_DIR))


def mnist_paths(split: str) -> tuple[Path, Path]:
    names = {
        "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
        "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
    }[split]
    img, lbl = (MNIST_DIR / n for n in names)
    if not (img.exists() and lbl.exists()):
        pytest.skip(f"MNIST {split} split not found under {MNIST_DIR}")
    return img, lbl


@pytest.fixture(scope="session")
def mnist_test():
    from mixprec.data import load_dataset

    img, lbl = mnist_paths("test")
    return load_dataset(img, lbl, "test")


@pytest.fixture(scope="session")
def mnist_train():
    from mixprec.data import load_dataset

    img, lbl = mnist_paths("train")
    return load_dataset(img, lbl, "train")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
