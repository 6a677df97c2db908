"""Deterministic synthetic digit corpus for environments without MNIST.

Builds 28x28 grayscale digits from the bundled 8x8 handwritten-digit scans
(scikit-learn), upscaled and augmented with seeded affine jitter, then
written as ordinary IDX files. It is a stand-in corpus: same shape, same
value range, same loader path as MNIST, but not the MNIST distribution.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import data
from .tensorops import DTYPE, SeededRng

_BASE_CACHE = {}


def _base_digits():
    """(images in [0,1] at 28x28, labels) for the 1797 bundled scans."""
    if "base" not in _BASE_CACHE:
        from scipy import ndimage
        from sklearn.datasets import load_digits

        raw = load_digits()
        imgs = np.stack([
            np.clip(ndimage.zoom(img / 16.0, 28 / 8, order=1), 0.0, 1.0)
            for img in raw.images
        ]).astype(DTYPE)
        _BASE_CACHE["base"] = (imgs, raw.target.astype(np.int64))
    return _BASE_CACHE["base"]


def _augment(img: np.ndarray, angle: float, dx: float, dy: float, scale: float) -> np.ndarray:
    from scipy import ndimage

    out = ndimage.rotate(img, angle, reshape=False, order=1, mode="constant")
    if scale != 1.0:
        center = 13.5
        matrix = np.array([[1 / scale, 0.0], [0.0, 1 / scale]])
        offset = center - matrix @ np.array([center, center])
        out = ndimage.affine_transform(out, matrix, offset=offset, order=1, mode="constant")
    out = ndimage.shift(out, (dy, dx), order=1, mode="constant")
    return np.clip(out, 0.0, 1.0)


def synth_dataset(n: int, seed: int, split: str = "train") -> data.Dataset:
    """n augmented digits, class-balanced draws, deterministic per (seed, split)."""
    base_imgs, base_labels = _base_digits()
    rng = SeededRng(seed).fork(8).fork(0 if split == "train" else 1)
    by_class = [np.flatnonzero(base_labels == c) for c in range(10)]
    images = np.empty((n, 28, 28, 1), dtype=DTYPE)
    labels = np.empty(n, dtype=np.int64)
    params = rng.uniform((n, 4))
    picks = rng.uniform((n,))
    for i in range(n):
        c = i % 10
        pool = by_class[c]
        src = base_imgs[pool[int(picks[i] * len(pool))]]
        angle = (params[i, 0] - 0.5) * 24.0  # +/- 12 degrees
        dx = (params[i, 1] - 0.5) * 5.0
        dy = (params[i, 2] - 0.5) * 5.0
        scale = 0.85 + params[i, 3] * 0.3
        images[i, :, :, 0] = _augment(src, angle, dx, dy, scale)
        labels[i] = c
    order = rng.permutation(n)
    # quantize to the uint8 grid so IDX round trips are exact
    images = np.round(images * 255.0) / 255.0
    return data.Dataset(images[order], labels[order], split)


def write_corpus(out_dir, n_train: int, n_test: int, seed: int) -> dict:
    """Write train/test IDX pairs under out_dir; returns the four file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_images": out_dir / "train-images-idx3-ubyte",
        "train_labels": out_dir / "train-labels-idx1-ubyte",
        "test_images": out_dir / "t10k-images-idx3-ubyte",
        "test_labels": out_dir / "t10k-labels-idx1-ubyte",
    }
    data.write_idx(synth_dataset(n_train, seed, "train"), paths["train_images"], paths["train_labels"])
    data.write_idx(synth_dataset(n_test, seed, "test"), paths["test_images"], paths["test_labels"])
    return paths
