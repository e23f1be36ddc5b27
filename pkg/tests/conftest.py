"""Shared fixtures: a small synthetic corpus with surrogate embeddings."""

from types import SimpleNamespace

import pytest

from mti.audio import load_wav
from mti.embeddings import write_embeddings
from mti.features import mel_surrogate_embeddings
from mti.manifest import SynthConfig, gen_synthetic


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(n_utts=60, duration_s=0.6, seed=123, test_fraction=1.0 / 6.0)
    records, manifest_path = gen_synthetic(cfg, out)
    emb_dir = out / "emb"
    emb_dir.mkdir()
    for r in records:
        seq = mel_surrogate_embeddings(load_wav(r.wav_path), n_mels=16)
        write_embeddings(seq, emb_dir / f"{r.utt_id}.mtie")
    return SimpleNamespace(
        records=records,
        manifest_path=manifest_path,
        emb_dir=emb_dir,
        root=out,
        train=[r for r in records if r.split == "train"],
        test=[r for r in records if r.split == "test"],
    )
