"""Binary model container with bit-exact round trips.

Layout (all integers little-endian):
    magic "DPMA" | version u32 | name_len u16 + arch name utf-8 |
    meta_len u32 + metadata JSON utf-8 | n_params u32 |
    per tensor: rank u32, dims u32 x rank, raw float64 data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import nn
from .tensorops import DTYPE

MAGIC = b"DPMA"
FORMAT_VERSION = 1


class ModelFormatError(Exception):
    """Raised for corrupt files, wrong versions, or shape mismatches."""


def save_model(model: nn.Model, path) -> None:
    path = Path(path)
    meta = json.dumps(model.metadata, sort_keys=True).encode("utf-8")
    name = model.arch.name.encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<H", len(name)) + name
    blob += struct.pack("<I", len(meta)) + meta
    blob += struct.pack("<I", len(model.params))
    for t in model.params:
        t = np.ascontiguousarray(t, dtype=DTYPE)
        blob += struct.pack("<I", t.ndim)
        blob += struct.pack(f"<{t.ndim}I", *t.shape)
        blob += t.astype("<f8", copy=False).tobytes()
    path.write_bytes(bytes(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise ModelFormatError("truncated model file")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_model(path) -> nn.Model:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise ModelFormatError(f"bad magic bytes in {path}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    name = r.take(r.u16()).decode("utf-8")
    try:
        metadata = json.loads(r.take(r.u32()).decode("utf-8"))
    except ValueError as e:
        raise ModelFormatError(f"bad metadata block: {e}") from e
    arch = nn.architecture(name, pool_stride=int(metadata.get("pool_stride", 1)))
    expected = nn.param_shapes(arch)
    n_params = r.u32()
    if n_params != len(expected):
        raise ModelFormatError(f"{name} expects {len(expected)} parameter tensors, file has {n_params}")
    params = []
    for shape in expected:
        rank = r.u32()
        dims = tuple(struct.unpack(f"<{rank}I", r.take(4 * rank))) if rank else ()
        if dims != tuple(shape):
            raise ModelFormatError(f"parameter shape {dims} does not match architecture ({tuple(shape)})")
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(DTYPE)
        params.append(data.reshape(dims))
    if r.off != len(r.buf):
        raise ModelFormatError("trailing bytes after last parameter tensor")
    return nn.Model(arch=arch, params=params, metadata=metadata)
