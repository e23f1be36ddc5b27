"""Writer/reader for the MTIE embedding container (the cross-component wire contract).

Layout, little-endian: magic "MTIE", u32 version=1, u32 frame_count, u32 dim,
u32 frame rate in milli-Hz, u32 tag length + UTF-8 tag, then frame_count*dim
float32 values row-major. Writes are atomic.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MTIE"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class MtieError(Exception):
    pass


def write_mtie(path, vectors: np.ndarray, frame_rate: float, tag: str) -> None:
    path = Path(path)
    arr = np.ascontiguousarray(vectors, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MtieError(f"embedding matrix must be (T>=1, d>=1), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise MtieError("embedding matrix contains non-finite values")
    rate_mhz = int(round(frame_rate * 1000.0))
    tag_bytes = tag.encode("utf-8")
    blob = _HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1], rate_mhz, len(tag_bytes))
    blob += tag_bytes + arr.tobytes()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def read_mtie(path) -> tuple[np.ndarray, float, str]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise MtieError(f"{path}: truncated header")
    magic, version, frames, dim, rate_mhz, tag_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MtieError(f"{path}: not an MTIE file")
    if version != VERSION:
        raise MtieError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    tag = data[off : off + tag_len].decode("utf-8")
    off += tag_len
    expected = frames * dim * 4
    if len(data) - off != expected:
        raise MtieError(f"{path}: payload is {len(data) - off} bytes, expected {expected}")
    vectors = np.frombuffer(data, dtype="<f4", count=frames * dim, offset=off).reshape(frames, dim).copy()
    return vectors, rate_mhz / 1000.0, tag
