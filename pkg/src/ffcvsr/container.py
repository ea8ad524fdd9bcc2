"""Binary tensor container used for weights, optimizer state and dataset clips.

Layout (all little-endian)::

    b"FFCW"  version:u32  count:u32
    count x ( name_len:u16  name:utf-8  rank:u8  extents:u32 * rank  data:f32 * prod(extents) )
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FFCW"
VERSION = 1


class ContainerError(ValueError):
    """Malformed or truncated container file."""


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ContainerError(f"name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ContainerError(f"rank too large for {name!r}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerError(f"{self.path}: truncated while reading {what} at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_tensors(path) -> dict[str, np.ndarray]:
    """Read a container; arrays come back as native float32."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4, "magic") != MAGIC:
        raise ContainerError(f"{path}: bad magic, not a tensor container")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported format version {version}")
    out: dict[str, np.ndarray] = {}
    for k in range(count):
        (nlen,) = r.unpack("<H", f"name length of entry {k}")
        try:
            name = r.take(nlen, f"name of entry {k}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerError(f"{path}: entry {k} name is not valid UTF-8") from exc
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        shape = r.unpack(f"<{rank}I", f"extents of {name!r}")
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * n, f"data of {name!r}"), dtype="<f4")
        if name in out:
            raise ContainerError(f"{path}: duplicate entry {name!r}")
        out[name] = data.astype(np.float32).reshape(shape)
    if r.pos != len(r.buf):
        raise ContainerError(f"{path}: {len(r.buf) - r.pos} trailing bytes after {count} entries")
    return out
