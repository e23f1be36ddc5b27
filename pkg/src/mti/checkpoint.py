"""MTIC checkpoint archive: config record + named tensors + normalization stats.

Layout, integers little-endian:

    bytes 0..3  magic "MTIC"
    u32         version (currently 1)
    u64         config length, then that many UTF-8 bytes of sorted
                ``key=value`` lines
    u32         parameter tensor count, then the tensors
    u32         normalization tensor count, then the tensors

Each tensor: u16 name length, name (UTF-8), u8 dtype tag (0 = f32, 1 = f64,
2 = i64), u8 rank, u32 per dimension, then the little-endian payload.
Tensors are written in sorted name order and files are written atomically,
so identical contents give byte-identical checkpoints.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MTIC"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


def _encode_tensor(name: str, array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_TAGS:
        raise CheckpointError(f"tensor '{name}' has unsupported dtype {arr.dtype}")
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise CheckpointError(f"tensor '{name}' contains non-finite values")
    nm = name.encode("utf-8")
    head = struct.pack("<H", len(nm)) + nm
    head += struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return head + le.tobytes()


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_tensor(r: _Reader) -> tuple[str, np.ndarray]:
    (name_len,) = r.unpack("<H")
    name = r.take(name_len).decode("utf-8")
    tag, ndim = r.unpack("<BB")
    if tag not in _DTYPES:
        raise CheckpointError(f"{r.path}: tensor '{name}' has unknown dtype tag {tag}")
    shape = r.unpack(f"<{ndim}I") if ndim else ()
    dtype = _DTYPES[tag]
    count = 1
    for s in shape:
        count *= s
    payload = r.take(count * dtype.itemsize)
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return name, arr


def save_checkpoint(path, config: dict[str, str], params: dict[str, np.ndarray], norm: dict[str, np.ndarray]) -> None:
    path = Path(path)
    for key, value in config.items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise CheckpointError(f"config key/value not encodable: {key!r}")
    record = "".join(f"{k}={config[k]}\n" for k in sorted(config)).encode("utf-8")
    blob = MAGIC + struct.pack("<I", VERSION)
    blob += struct.pack("<Q", len(record)) + record
    blob += struct.pack("<I", len(params))
    for name in sorted(params):
        blob += _encode_tensor(name, params[name])
    blob += struct.pack("<I", len(norm))
    for name in sorted(norm):
        blob += _encode_tensor(name, norm[name])
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray], dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not an MTIC checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (config_len,) = r.unpack("<Q")
    config: dict[str, str] = {}
    for line in r.take(config_len).decode("utf-8").splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        config[key] = value
    params: dict[str, np.ndarray] = {}
    (n_params,) = r.unpack("<I")
    for _ in range(n_params):
        name, arr = _decode_tensor(r)
        params[name] = arr
    norm: dict[str, np.ndarray] = {}
    (n_norm,) = r.unpack("<I")
    for _ in range(n_norm):
        name, arr = _decode_tensor(r)
        norm[name] = arr
    if r.off != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.off} trailing bytes")
    return config, params, norm
