"""MTIE container round-trips and frame-grid alignment."""

import struct

import numpy as np
import pytest

from mti.embeddings import EmbeddingSeq, align_to_frames, read_embeddings, write_embeddings
from mti.errors import (
    BadMagicError,
    EmbeddingFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
)


def roundtrip(seq, path):
    write_embeddings(seq, path)
    return read_embeddings(path)


def test_minimal_roundtrip(tmp_path):
    seq = EmbeddingSeq(vectors=np.array([[0.0]], dtype=np.float32), frame_rate=50.0, source_tag="t")
    back = roundtrip(seq, tmp_path / "a.mtie")
    assert back.vectors.shape == (1, 1)
    assert back.vectors.tobytes() == seq.vectors.tobytes()
    assert back.frame_rate == 50.0
    assert back.source_tag == "t"


def test_random_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    seq = EmbeddingSeq(
        vectors=rng.normal(size=(50, 768)).astype(np.float32),
        frame_rate=49.9,
        source_tag="ssl-base+pretrained",
    )
    back = roundtrip(seq, tmp_path / "b.mtie")
    assert back.vectors.tobytes() == seq.vectors.tobytes()
    assert back.frame_rate == 49.9
    assert back.source_tag == seq.source_tag


def test_many_shapes_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "c.mtie"
    for i in range(1000):
        t = int(rng.integers(1, 12))
        d = int(rng.integers(1, 20))
        seq = EmbeddingSeq(
            vectors=rng.normal(size=(t, d)).astype(np.float32),
            frame_rate=float(rng.integers(1, 200)),
            source_tag=f"m{i}",
        )
        back = roundtrip(seq, path)
        assert back.vectors.tobytes() == seq.vectors.tobytes()
        assert back.vectors.shape == seq.vectors.shape


def test_bad_magic_errors(tmp_path):
    path = tmp_path / "bad.mtie"
    seq = EmbeddingSeq(vectors=np.zeros((2, 3), dtype=np.float32), frame_rate=50.0, source_tag="x")
    write_embeddings(seq, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(BadMagicError, match="not an MTIE file"):
        read_embeddings(path)


def test_unsupported_version_errors(tmp_path):
    path = tmp_path / "v9.mtie"
    header = struct.pack("<4sIIIII", b"MTIE", 9, 1, 1, 50000, 0)
    path.write_bytes(header + b"\x00" * 4)
    with pytest.raises(UnsupportedVersionError):
        read_embeddings(path)


def test_truncated_payload_errors(tmp_path):
    path = tmp_path / "trunc.mtie"
    seq = EmbeddingSeq(vectors=np.zeros((4, 4), dtype=np.float32), frame_rate=50.0, source_tag="x")
    write_embeddings(seq, path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(TruncatedFileError):
        read_embeddings(path)


def test_trailing_bytes_errors(tmp_path):
    path = tmp_path / "pad.mtie"
    seq = EmbeddingSeq(vectors=np.zeros((2, 2), dtype=np.float32), frame_rate=50.0, source_tag="x")
    write_embeddings(seq, path)
    path.write_bytes(path.read_bytes() + b"JUNK")
    with pytest.raises(EmbeddingFormatError):
        read_embeddings(path)


def test_no_partial_file_left_on_write(tmp_path):
    seq = EmbeddingSeq(vectors=np.zeros((2, 2), dtype=np.float32), frame_rate=50.0, source_tag="x")
    write_embeddings(seq, tmp_path / "out.mtie")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out.mtie"]


# ---------------------------------------------------------------------------
# align_to_frames
# ---------------------------------------------------------------------------

def test_align_matched_grids_is_identity():
    rng = np.random.default_rng(2)
    seq = EmbeddingSeq(vectors=rng.normal(size=(20, 4)).astype(np.float32), frame_rate=50.0, source_tag="x")
    out = align_to_frames(seq, 20, 50.0)
    assert np.array_equal(out, seq.vectors)


def test_align_upsample_matches_scalar_index_oracle():
    rng = np.random.default_rng(3)
    seq = EmbeddingSeq(vectors=rng.normal(size=(50, 3)).astype(np.float32), frame_rate=50.0, source_tag="x")
    out = align_to_frames(seq, 100, 100.0)
    assert out.shape == (100, 3)
    # scalar oracle: Python round() is round-half-to-even
    for f in range(100):
        idx = min(49, max(0, round(f * 50.0 / 100.0)))
        assert np.array_equal(out[f], seq.vectors[idx])
    # rows 0 and 1 both map to source row 0 (round(0.5) == 0)
    assert np.array_equal(out[0], seq.vectors[0])
    assert np.array_equal(out[1], seq.vectors[0])
    # every source row appears at least once
    used = {min(49, max(0, round(f * 0.5))) for f in range(100)}
    assert used == set(range(50))


def test_align_single_frame_clamps():
    seq = EmbeddingSeq(vectors=np.array([[1.5, -2.5]], dtype=np.float32), frame_rate=50.0, source_tag="x")
    out = align_to_frames(seq, 7, 62.5)
    assert out.shape == (7, 2)
    assert np.all(out == seq.vectors[0])


def test_align_downsample_rows_are_exact_copies():
    rng = np.random.default_rng(4)
    seq = EmbeddingSeq(vectors=rng.normal(size=(100, 5)).astype(np.float32), frame_rate=100.0, source_tag="x")
    out = align_to_frames(seq, 31, 62.5)
    src_rows = {r.tobytes() for r in seq.vectors}
    for row in out:
        assert row.tobytes() in src_rows


def test_align_deterministic():
    rng = np.random.default_rng(5)
    seq = EmbeddingSeq(vectors=rng.normal(size=(33, 2)).astype(np.float32), frame_rate=49.0, source_tag="x")
    a = align_to_frames(seq, 61, 62.5)
    b = align_to_frames(seq, 61, 62.5)
    assert np.array_equal(a, b)
