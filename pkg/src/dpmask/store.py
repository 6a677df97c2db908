"""Atomic result files, the content-addressed model cache, and run records."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import model_io


def atomic_write_bytes(path, payload: bytes) -> Path:
    """Write via temp file + rename: a crash never leaves a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def config_hash(fields: dict) -> str:
    """sha256 over a canonical key=value rendering of the given fields."""
    canon = "\n".join(f"{k}={fields[k]!r}" for k in sorted(fields))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class ModelKey:
    """Everything that influences training; hashed to address the cache."""
    arch: str
    pool_stride: int
    optimizer: str  # sgd | dpsgd
    sigma: float
    clip_norm: float
    epochs: int
    learning_rate: float
    batch_size: int
    seed: int
    data_tag: str  # identifies the exact training subset
    per_example_noise: bool = False

    def hash(self) -> str:
        return config_hash(dataclasses.asdict(self))


class ModelStore:
    """Trains at most once per ModelKey; later calls load the cached file."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, key: ModelKey) -> Path:
        return self.root / f"{key.hash()}.dpma"

    def get(self, key: ModelKey, train_fn) -> tuple:
        """(model, was_cached). train_fn() -> Model runs only on a cache miss."""
        path = self.path(key)
        if path.exists():
            return model_io.load_model(path), True
        model = train_fn()
        model.metadata["cache_key"] = key.hash()
        tmp = path.with_suffix(".saving")
        model_io.save_model(model, tmp)
        os.replace(tmp, path)
        return model, False


@dataclass
class ResultRecord:
    experiment_id: str
    config_hash: str
    model_hashes: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    started_at: float = field(default_factory=time.time)
    finished_at: float = 0.0

    def finish(self) -> "ResultRecord":
        self.finished_at = time.time()
        return self

    def write(self, path) -> Path:
        return atomic_write_text(path, json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True))
