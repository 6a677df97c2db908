"""MNIST-style IDX loading, batching, subsampling, and attack-seed selection.

Images are kept as float64 in [0, 1] (plain /255 normalization, no
mean-centering) so perturbation budgets like eps=0.3 carry their usual
meaning. Gzip-compressed IDX files are detected by their 2-byte prefix.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .tensorops import DTYPE, SeededRng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_PREFIX = b"\x1f\x8b"


class DataError(Exception):
    """Raised for malformed IDX files or impossible sampling requests."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, 28, 28, 1) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 in 0..9
    split: str = "train"

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"images/labels length mismatch: {self.images.shape[0]} vs {self.labels.shape[0]}"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], self.split)


def _read_payload(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_PREFIX:
        raw = gzip.decompress(raw)
    return raw


def _parse_header(raw: bytes, expect_magic: int, n_dims: int, path) -> tuple:
    need = 4 * (1 + n_dims)
    if len(raw) < need:
        raise DataError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expect_magic:
        raise DataError(f"{path}: bad IDX magic 0x{magic:08x} (expected 0x{expect_magic:08x})")
    dims = struct.unpack(f">{n_dims}I", raw[4:need])
    return dims, raw[need:]


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse a big-endian IDX image/label pair into a normalized Dataset."""
    (n, rows, cols), img_payload = _parse_header(_read_payload(images_path), IMAGE_MAGIC, 3, images_path)
    if (rows, cols) != (28, 28):
        raise DataError(f"{images_path}: expected 28x28 images, got {rows}x{cols}")
    if len(img_payload) < n * rows * cols:
        raise DataError(f"{images_path}: truncated image payload")
    images = np.frombuffer(img_payload[: n * rows * cols], dtype=np.uint8)
    images = images.reshape(n, rows, cols, 1).astype(DTYPE) / 255.0

    (nl,), lbl_payload = _parse_header(_read_payload(labels_path), LABEL_MAGIC, 1, labels_path)
    if nl != n:
        raise DataError(f"IDX pair disagrees on count: {n} images vs {nl} labels")
    if len(lbl_payload) < nl:
        raise DataError(f"{labels_path}: truncated label payload")
    labels = np.frombuffer(lbl_payload[:nl], dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= nn.NUM_CLASSES:
        raise DataError(f"{labels_path}: label {labels.max()} out of range 0..9")
    return Dataset(images, labels, split)


def write_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write a Dataset back out as raw IDX files (inverse of load_idx)."""
    n = len(ds)
    pixels = np.round(ds.images * 255.0).astype(np.uint8).reshape(n, 28, 28)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, 28, 28) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, n) + ds.labels.astype(np.uint8).tobytes())


def batches(ds: Dataset, batch_size: int, shuffle_seed: int, epoch: int = 0):
    """Deterministically shuffled (images, labels) batches; the short tail batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = SeededRng(shuffle_seed).fork(4).fork(epoch).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        yield ds.images[idx], ds.labels[idx]


def subsample(ds: Dataset, n: int, seed: int) -> Dataset:
    """Stratified draw of n examples without replacement, deterministic per seed.

    Per-class quotas are proportional (largest-remainder rounding), so a
    balanced source with n divisible by 10 yields exactly n/10 per class.
    """
    if n > len(ds):
        raise DataError(f"cannot subsample {n} from dataset of {len(ds)}")
    rng = SeededRng(seed).fork(1)
    counts = np.bincount(ds.labels, minlength=nn.NUM_CLASSES)
    quota = n * counts / len(ds)
    base = np.floor(quota).astype(int)
    remainder = n - base.sum()
    # distribute leftovers by largest fractional part, ties to lower class
    order = np.lexsort((np.arange(nn.NUM_CLASSES), -(quota - base)))
    base[order[:remainder]] += 1
    picked = []
    for c in range(nn.NUM_CLASSES):
        pool = np.flatnonzero(ds.labels == c)
        if base[c] > len(pool):
            raise DataError(f"class {c} has only {len(pool)} examples, need {base[c]}")
        picked.append(pool[rng.choice(len(pool), base[c], replace=False)])
    idx = np.concatenate(picked)
    idx = idx[rng.permutation(len(idx))]
    return ds.take(idx)


def find_split(root, split: str) -> tuple:
    """Locate the (images, labels) IDX pair for a split under a directory.

    Accepts the common MNIST filename variants, raw or gzipped.
    """
    root = Path(root)
    prefix = "train" if split == "train" else "t10k"
    out = []
    for kind, ext in (("images", "idx3-ubyte"), ("labels", "idx1-ubyte")):
        found = None
        for name in (f"{prefix}-{kind}-{ext}", f"{prefix}-{kind}.{ext}"):
            for candidate in (root / name, root / (name + ".gz")):
                if candidate.exists():
                    found = candidate
                    break
            if found:
                break
        if found is None:
            raise DataError(f"no {split} {kind} IDX file under {root}")
        out.append(found)
    return tuple(out)


def load_dir(root) -> tuple:
    """(train, test) Datasets from a directory of IDX files."""
    train = load_idx(*find_split(root, "train"), split="train")
    test = load_idx(*find_split(root, "test"), split="test")
    return train, test


def select_attack_seeds(model: nn.Model, ds: Dataset, n: int, seed: int) -> Dataset:
    """n correctly-classified points drawn uniformly at random per seed."""
    preds = np.concatenate(
        [nn.predict(model, ds.images[s : s + 500]) for s in range(0, len(ds), 500)]
    )
    correct = np.flatnonzero(preds == ds.labels)
    if len(correct) < n:
        raise DataError(
            f"need {n} correctly classified points but the model gets only {len(correct)} right"
        )
    rng = SeededRng(seed).fork(2)
    idx = correct[rng.choice(len(correct), n, replace=False)]
    return ds.take(idx)
