"""SPNW weight files.

Layout (all integers little-endian u32)::

    b"SPNW"
    version
    fingerprint length, fingerprint (UTF-8 architecture string)
    record count
    per record, sorted by name:
        name length, name (UTF-8)
        rank, dims[rank]
        float32 LE payload, row-major, prod(dims) values
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from pickpoint.errors import WeightFormatError
from pickpoint.sparsenn.network import FORMAT_VERSION, ArchConfig, NetworkWeights

MAGIC = b"SPNW"


def encode_weights(w: NetworkWeights) -> bytes:
    fp = w.config.fingerprint().encode()
    parts = [MAGIC, struct.pack("<II", w.version, len(fp)), fp, struct.pack("<I", len(w.tensors))]
    for name in sorted(w.tensors):
        arr = w.tensors[name]
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(w: NetworkWeights, path) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_weights(w))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightFormatError(f"truncated weight file (needed {n} bytes at offset {self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode_weights(buf: bytes) -> NetworkWeights:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise WeightFormatError("not an SPNW weight file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"unsupported weight format version {version}")
    try:
        fingerprint = r.take(r.u32()).decode()
        tensors = {}
        for _ in range(r.u32()):
            name = r.take(r.u32()).decode()
            rank = r.u32()
            dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
            count = int(np.prod(dims, dtype=np.int64))
            data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
            if name in tensors:
                raise WeightFormatError(f"duplicate layer '{name}'")
            tensors[name] = data.astype(np.float64)
    except UnicodeDecodeError as exc:
        raise WeightFormatError(f"corrupt weight file: {exc}") from exc
    if r.pos != len(buf):
        raise WeightFormatError(f"{len(buf) - r.pos} trailing bytes after the last record")
    try:
        config = ArchConfig.from_fingerprint(fingerprint)
    except Exception as exc:
        raise WeightFormatError(str(exc)) from exc
    return NetworkWeights(tensors, config, version)


def load_weights(path) -> NetworkWeights:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise WeightFormatError(f"cannot read weights '{path}': {exc.strerror}") from exc
    return decode_weights(buf)
