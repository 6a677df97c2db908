"""Dense float64 tensors, norms, and the seeded random generator.

Every numeric carrier in this project is a C-order (row-major) float64
numpy array. Tensors are treated as immutable once constructed; operations
return fresh arrays. Randomness flows exclusively through SeededRng so that
identical seeds reproduce identical streams bit-for-bit.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def tensor(data, shape=None) -> np.ndarray:
    """Materialize data as a C-order float64 array, optionally reshaped."""
    t = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        t = t.reshape(shape)
    return t


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=DTYPE)


def check_finite(t: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{what} contains non-finite values")
    return t


def l2_norm(t: np.ndarray) -> float:
    """Euclidean norm over all elements. Errors on an empty tensor."""
    t = np.asarray(t)
    if t.size == 0:
        raise ValueError("l2_norm of empty tensor")
    return float(np.sqrt(np.sum(np.square(t, dtype=DTYPE))))


def linf_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute elementwise difference. Shapes must match."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def sign(t: np.ndarray) -> np.ndarray:
    """Elementwise -1/0/+1 by strict sign; sign(0) = 0."""
    return np.sign(np.asarray(t, dtype=DTYPE))


def clamp01(t: np.ndarray) -> np.ndarray:
    """Clip elementwise into the valid pixel range [0, 1]."""
    return np.clip(np.asarray(t, dtype=DTYPE), 0.0, 1.0)


class SeededRng:
    """Deterministic random source keyed by a 64-bit seed.

    Identical (seed, fork path) pairs yield bit-identical sample streams on
    a fixed numpy version. Parallel consumers must not share one instance;
    derive independent children with fork(stream_id).
    """

    def __init__(self, seed: int, _spawn_key: tuple = ()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self._spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def fork(self, stream_id: int) -> "SeededRng":
        """Child generator for (seed, stream_id); independent of the parent stream."""
        return SeededRng(self.seed, self._spawn_key + (int(stream_id),))

    def gaussian(self, shape, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
        if stddev < 0:
            raise ValueError(f"negative stddev: {stddev}")
        return self._gen.normal(loc=mean, scale=stddev, size=shape).astype(DTYPE, copy=False)

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if lo > hi:
            raise ValueError(f"uniform bounds reversed: lo={lo} > hi={hi}")
        return self._gen.uniform(low=lo, high=hi, size=shape).astype(DTYPE, copy=False)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)
