import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dpmask import data, nn
from dpmask.tensorops import SeededRng


def pytest_configure(config):
    config.addinivalue_line("markers", "desk: desk-scale integration tests (train real models)")


@pytest.fixture(scope="session")
def lenet_model():
    return nn.build_model(nn.architecture("lenet"), seed=11)


@pytest.fixture(scope="session")
def custom_model():
    return nn.build_model(nn.architecture("custom"), seed=11)


@pytest.fixture()
def rng():
    return SeededRng(1234)


@pytest.fixture(scope="session")
def small_batch():
    gen = np.random.default_rng(7)
    x = gen.uniform(0.0, 1.0, size=(3, 28, 28, 1))
    y = gen.integers(0, 10, size=3)
    return x, y


def mnist_dir() -> Path | None:
    """Directory holding the real MNIST IDX files, if the environment has them."""
    candidates = []
    if os.environ.get("DPMASK_DATA_DIR"):
        candidates.append(Path(os.environ["DPMASK_DATA_DIR"]))
    candidates.append(Path(__file__).resolve().parent.parent / "data")
    for root in candidates:
        if _has_idx_pair(root):
            return root
    return None


def _has_idx_pair(root: Path) -> bool:
    if not root.is_dir():
        return False
    for stem in ("train-images-idx3-ubyte", "train-images.idx3-ubyte"):
        if (root / stem).exists() or (root / (stem + ".gz")).exists():
            return True
    return False


def resolve_idx(root: Path, kind: str, split: str) -> Path:
    ext = "idx3-ubyte" if kind == "images" else "idx1-ubyte"
    prefix = "train" if split == "train" else "t10k"
    for name in (f"{prefix}-{kind}-{ext}", f"{prefix}-{kind}.{ext}"):
        for candidate in (root / name, root / (name + ".gz")):
            if candidate.exists():
                return candidate
    raise FileNotFoundError(f"no {split} {kind} IDX file under {root}")


@pytest.fixture(scope="session")
def mnist():
    """Real MNIST splits; skips (with instructions) when the files are absent."""
    root = mnist_dir()
    if root is None:
        pytest.skip(
            "MNIST IDX files not found: set DPMASK_DATA_DIR or place "
            "train-images-idx3-ubyte(.gz) etc. under ./data (this sandbox has "
            "no network access to download them)"
        )
    train = data.load_idx(resolve_idx(root, "images", "train"), resolve_idx(root, "labels", "train"), "train")
    test = data.load_idx(resolve_idx(root, "images", "test"), resolve_idx(root, "labels", "test"), "test")
    return train, test
