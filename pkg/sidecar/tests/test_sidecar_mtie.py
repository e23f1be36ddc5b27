"""MTIE container round-trips within the sidecar."""

import numpy as np
import pytest

from mti_sidecar.mtie import MtieError, read_mtie, write_mtie


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(49, 64)).astype(np.float32)
    path = tmp_path / "x.mtie"
    write_mtie(path, vectors, 50.0, "tiny-seeded+pretrained;layer=-1")
    back, rate, tag = read_mtie(path)
    assert back.tobytes() == vectors.tobytes()
    assert rate == 50.0
    assert tag == "tiny-seeded+pretrained;layer=-1"


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.mtie"
    write_mtie(path, np.zeros((1, 1), dtype=np.float32), 50.0, "")
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(MtieError, match="not an MTIE"):
        read_mtie(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.mtie"
    write_mtie(path, np.zeros((3, 3), dtype=np.float32), 50.0, "x")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(MtieError, match="payload"):
        read_mtie(path)


def test_rejects_empty_matrix(tmp_path):
    with pytest.raises(MtieError):
        write_mtie(tmp_path / "e.mtie", np.zeros((0, 4), dtype=np.float32), 50.0, "x")
