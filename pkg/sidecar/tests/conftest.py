"""Sidecar test fixtures: a small corpus produced by the primary toolkit.

The sidecar consumes the manifest CSV and wav files exactly as an operator
would hand them over; the primary package is used here only to generate
that input and to validate MTIE output (the declared wire contract).
"""

from types import SimpleNamespace

import pytest

from mti.manifest import SynthConfig, gen_synthetic

from mti_sidecar.manifest import load_manifest


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("sidecar_corpus")
    cfg = SynthConfig(n_utts=24, duration_s=1.0, seed=31, test_fraction=1.0 / 6.0)
    gen_synthetic(cfg, root)
    utts = load_manifest(root / "manifest.csv")
    return SimpleNamespace(
        root=root,
        manifest=root / "manifest.csv",
        utts=utts,
        train=[u for u in utts if u.split == "train"],
    )
