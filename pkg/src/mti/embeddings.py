"""Binary interchange format for frame-embedding sequences (MTIE files).

Layout, all integers little-endian:

    bytes 0..3   magic "MTIE"
    u32          version (currently 1)
    u32          frame_count
    u32          dim
    u32          frame rate in milli-Hz
    u32          tag length in bytes, then the UTF-8 tag
    payload      frame_count * dim float32 values, row-major

Writes are atomic (temp file + rename). Reads are strict: wrong magic,
unsupported version, and truncated payloads are distinct errors.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, EmbeddingFormatError, TruncatedFileError, UnsupportedVersionError

MAGIC = b"MTIE"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, frames, dim, rate_mhz, tag_len


@dataclass
class EmbeddingSeq:
    """A (T, d) float sequence at a fixed frame rate, with a provenance tag."""

    vectors: np.ndarray
    frame_rate: float
    source_tag: str

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise EmbeddingFormatError(f"embedding matrix must be (T>=1, d>=1), got {v.shape}")
        if not np.isfinite(v).all():
            raise EmbeddingFormatError("embedding matrix contains non-finite values")
        if self.frame_rate <= 0:
            raise EmbeddingFormatError(f"frame rate must be positive, got {self.frame_rate}")

    @property
    def num_frames(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def write_embeddings(seq: EmbeddingSeq, destination) -> None:
    """Serialize to an MTIE file; round-trips bit-exactly through read_embeddings."""
    destination = Path(destination)
    tag = seq.source_tag.encode("utf-8")
    rate_mhz = int(round(seq.frame_rate * 1000.0))
    if not 0 < rate_mhz < 2**32:
        raise EmbeddingFormatError(f"frame rate {seq.frame_rate} Hz not representable in milli-Hz u32")
    payload = np.ascontiguousarray(seq.vectors, dtype="<f4").tobytes()
    blob = _HEADER.pack(MAGIC, VERSION, seq.num_frames, seq.dim, rate_mhz, len(tag)) + tag + payload
    tmp = destination.with_name(destination.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, destination)


def read_embeddings(source) -> EmbeddingSeq:
    """Parse an MTIE file; exact inverse of write_embeddings."""
    source = Path(source)
    data = source.read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{source}: file shorter than the fixed header")
    magic, version, frames, dim, rate_mhz, tag_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{source}: not an MTIE file")
    if version != VERSION:
        raise UnsupportedVersionError(f"{source}: unsupported MTIE version {version}")
    offset = _HEADER.size
    if len(data) < offset + tag_len:
        raise TruncatedFileError(f"{source}: truncated tag")
    tag = data[offset : offset + tag_len].decode("utf-8")
    offset += tag_len
    expected = frames * dim * 4
    if len(data) - offset < expected:
        raise TruncatedFileError(
            f"{source}: payload has {len(data) - offset} bytes, header declares {expected}"
        )
    if len(data) - offset > expected:
        raise EmbeddingFormatError(f"{source}: {len(data) - offset - expected} trailing bytes after payload")
    vectors = np.frombuffer(data, dtype="<f4", count=frames * dim, offset=offset).reshape(frames, dim)
    return EmbeddingSeq(vectors=vectors.copy(), frame_rate=rate_mhz / 1000.0, source_tag=tag)


def align_to_frames(seq: EmbeddingSeq, target_frames: int, target_rate: float) -> np.ndarray:
    """Resample by nearest-index repetition onto a target frame grid.

    Output row f is source row round(f * seq.frame_rate / target_rate)
    (round-half-to-even), clamped to the source range. No interpolation:
    rows are copied verbatim, keeping the representation exact.
    """
    if target_frames < 1:
        raise EmbeddingFormatError("target_frames must be >= 1")
    if target_rate <= 0:
        raise EmbeddingFormatError("target_rate must be positive")
    f = np.arange(target_frames, dtype=np.float64)
    idx = np.rint(f * (seq.frame_rate / target_rate)).astype(np.int64)
    idx = np.clip(idx, 0, seq.num_frames - 1)
    return np.asarray(seq.vectors)[idx]
