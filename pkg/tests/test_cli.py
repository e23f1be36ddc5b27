"""End-to-end CLI flows on a tiny corpus, exit codes, and artifacts."""

import hashlib
import json
import xml.etree.ElementTree as ET
from types import SimpleNamespace

import numpy as np
import pytest

from mti.checkpoint import load_checkpoint
from mti.cli import main
from mti.embeddings import read_embeddings

SVG_NS = "{http://www.w3.org/2000/svg}"

TINY_CFG = """
# tiny desk config for fast tests
synth.n_utts = 18
synth.duration_s = 0.6
synth.seed = 7
model.conv_channels = 4,8
model.blstm_hidden = 8
model.shared_fc = 8
model.attn_dim = 4
model.lfb_filters = 8
optim.epochs = 2
optim.batch_size = 4
optim.learning_rate = 1e-3
optim.val_fraction = 0.2
extract.surrogate_mels = 8
"""


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.conf"
    cfg_path.write_text(TINY_CFG)
    corpus = root / "corpus"
    assert main(["gen-synth", "--config", str(cfg_path), "--out", str(corpus)]) == 0
    emb = root / "emb"
    assert (
        main(
            [
                "extract",
                "--config",
                str(cfg_path),
                "--manifest",
                str(corpus / "manifest.csv"),
                "--features",
                "ssl-surrogate",
                "--out",
                str(emb),
            ]
        )
        == 0
    )
    return SimpleNamespace(root=root, cfg=cfg_path, corpus=corpus, manifest=corpus / "manifest.csv", emb=emb)


@pytest.fixture(scope="module")
def trained(cli_corpus):
    ckpt = cli_corpus.root / "model.mtic"
    log = cli_corpus.root / "train.jsonl"
    code = main(
        [
            "train",
            "--config",
            str(cli_corpus.cfg),
            "--manifest",
            str(cli_corpus.manifest),
            "--embeddings-dir",
            str(cli_corpus.emb),
            "--targets",
            "I,W,S",
            "--out-ckpt",
            str(ckpt),
            "--out-log",
            str(log),
        ]
    )
    assert code == 0
    return SimpleNamespace(ckpt=ckpt, log=log, **vars(cli_corpus))


def test_gen_synth_deterministic_across_invocations(cli_corpus, tmp_path):
    again = tmp_path / "again"
    assert main(["gen-synth", "--config", str(cli_corpus.cfg), "--out", str(again)]) == 0
    assert (again / "manifest.csv").read_bytes() == cli_corpus.manifest.read_bytes()


def test_extract_feature_dumps_tagged(cli_corpus, tmp_path):
    out = tmp_path / "feats"
    code = main(
        [
            "extract",
            "--config",
            str(cli_corpus.cfg),
            "--manifest",
            str(cli_corpus.manifest),
            "--features",
            "ps,lfb",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    ps_files = sorted(out.glob("*.ps.mtie"))
    lfb_files = sorted(out.glob("*.lfb.mtie"))
    assert len(ps_files) == 18 and len(lfb_files) == 18
    ps = read_embeddings(ps_files[0])
    assert ps.source_tag == "ps" and ps.dim == 257
    lfb = read_embeddings(lfb_files[0])
    assert lfb.source_tag == "lfb" and lfb.dim == 8


def test_train_writes_checkpoint_log_and_table(trained, capsys):
    assert trained.ckpt.is_file()
    lines = trained.log.read_text().strip().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert rec["epoch"] == 1 and "O" in rec


def test_train_targets_flag_selects_active_targets(cli_corpus, tmp_path):
    ckpt = tmp_path / "ionly.mtic"
    code = main(
        [
            "train",
            "--config",
            str(cli_corpus.cfg),
            "--set",
            "optim.epochs=1",
            "--manifest",
            str(cli_corpus.manifest),
            "--embeddings-dir",
            str(cli_corpus.emb),
            "--targets",
            "I",
            "--out-ckpt",
            str(ckpt),
        ]
    )
    assert code == 0
    config, params, _ = load_checkpoint(ckpt)
    assert config["model.active_targets"] == "I"
    assert not any(name.startswith("heads.W.") for name in params)


def test_train_missing_manifest_exits_2(tmp_path, capsys):
    code = main(
        [
            "train",
            "--manifest",
            str(tmp_path / "nope.csv"),
            "--out-ckpt",
            str(tmp_path / "x.mtic"),
        ]
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "nope.csv" in err and err.count("\n") == 1


def test_eval_report_and_csv(trained, tmp_path, capsys):
    out_json = tmp_path / "report.json"
    out_csv = tmp_path / "pairs.csv"
    code = main(
        [
            "eval",
            "--ckpt",
            str(trained.ckpt),
            "--manifest",
            str(trained.manifest),
            "--embeddings-dir",
            str(trained.emb),
            "--out-json",
            str(out_json),
            "--out-csv",
            str(out_csv),
        ]
    )
    assert code == 0
    report = json.loads(out_json.read_text())
    assert set(report) == {"I", "W", "S"}
    for t in report:
        assert set(report[t]) == {"lcc", "srcc", "mse", "n"}
        assert report[t]["n"] == 3  # test split of 18 at 1/6
    table = capsys.readouterr().out
    assert "LCC" in table and "SRCC" in table and "MSE" in table


def test_eval_oracle_mode_is_perfect(trained, tmp_path):
    out_json = tmp_path / "oracle.json"
    code = main(
        [
            "eval",
            "--ckpt",
            str(trained.ckpt),
            "--manifest",
            str(trained.manifest),
            "--oracle",
            "--out-json",
            str(out_json),
        ]
    )
    assert code == 0
    report = json.loads(out_json.read_text())
    for t in report:
        assert report[t]["lcc"] == pytest.approx(1.0, abs=1e-12)
        assert report[t]["srcc"] == pytest.approx(1.0, abs=1e-12)
        assert report[t]["mse"] == 0.0


def test_eval_empty_split_exits_2(trained, capsys):
    lines = trained.manifest.read_text().splitlines()
    keep = [lines[0]] + [l for l in lines[1:] if l.endswith(",train")]
    # wav paths are relative to the manifest directory, so stay in the corpus dir
    manifest = trained.corpus / "train_only.csv"
    manifest.write_text("\n".join(keep) + "\n")
    code = main(["eval", "--ckpt", str(trained.ckpt), "--manifest", str(manifest), "--embeddings-dir", str(trained.emb)])
    assert code == 2
    assert "test" in capsys.readouterr().err


def test_predict_outputs_scores(trained, capsys):
    wav = next((trained.corpus / "wav").glob("*.wav"))
    utt_id = wav.stem
    code = main(
        [
            "predict",
            "--ckpt",
            str(trained.ckpt),
            "--wav",
            str(wav),
            "--embeddings",
            str(trained.emb / f"{utt_id}.mtie"),
        ]
    )
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload["scores"]) == {"I", "W", "S"}
    for v in payload["scores"].values():
        assert 0.0 < v < 1.0


def test_scatter_svg_structure(trained, tmp_path):
    csv_path = tmp_path / "pairs.csv"
    csv_path.write_text(
        "utt_id,target,truth,predicted\n"
        "a,I,0.25,0.25\n"
        "b,I,0.5,0.5\n"
        "c,I,0.75,0.8\n"
    )
    out = tmp_path / "plot.svg"
    assert main(["scatter", "--csv", str(csv_path), "--out-svg", str(out)]) == 0
    svg_path = tmp_path / "plot.I.svg"
    tree = ET.parse(svg_path)
    circles = tree.getroot().findall(f".//{SVG_NS}circle")
    diagonals = [e for e in tree.getroot().findall(f".//{SVG_NS}line") if e.get("class") == "diagonal"]
    assert len(circles) == 3
    assert len(diagonals) == 1
    # points with truth == predicted must fall within 1 px of the diagonal
    d = diagonals[0]
    x1, y1, x2, y2 = (float(d.get(k)) for k in ("x1", "y1", "x2", "y2"))
    for c in circles[:2]:
        cx, cy = float(c.get("cx")), float(c.get("cy"))
        dist = abs((y2 - y1) * cx - (x2 - x1) * cy + x2 * y1 - y2 * x1) / np.hypot(y2 - y1, x2 - x1)
        assert dist <= 1.0


def test_scatter_clips_out_of_range(trained, tmp_path, caplog):
    csv_path = tmp_path / "pairs.csv"
    csv_path.write_text("utt_id,target,truth,predicted\na,W,0.5,1.2\nb,W,0.25,0.3\n")
    out = tmp_path / "plot.svg"
    with caplog.at_level("WARNING"):
        assert main(["scatter", "--csv", str(csv_path), "--out-svg", str(out)]) == 0
    tree = ET.parse(tmp_path / "plot.W.svg")
    classes = [c.get("class") for c in tree.getroot().findall(f".//{SVG_NS}circle")]
    assert "point clipped" in classes
    assert any("outside" in m for m in caplog.messages)


def test_deterministic_train_runs_byte_identical(cli_corpus, tmp_path, monkeypatch):
    monkeypatch.setenv("MTI_DETERMINISTIC", "1")
    digests = []
    for name in ("one", "two"):
        ckpt = tmp_path / f"{name}.mtic"
        code = main(
            [
                "train",
                "--config",
                str(cli_corpus.cfg),
                "--set",
                "optim.epochs=1",
                "--manifest",
                str(cli_corpus.manifest),
                "--embeddings-dir",
                str(cli_corpus.emb),
                "--out-ckpt",
                str(ckpt),
            ]
        )
        assert code == 0
        digests.append(hashlib.sha256(ckpt.read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_internal_error_exits_3(monkeypatch, capsys, tmp_path):
    import mti.cli as cli_mod

    def boom(args):
        raise RuntimeError("kaboom")

    monkeypatch.setattr(cli_mod, "cmd_scatter", boom)
    parser = cli_mod.build_parser()
    # re-dispatch through main with the patched handler
    monkeypatch.setattr(cli_mod, "build_parser", lambda: parser)
    csv_path = tmp_path / "p.csv"
    csv_path.write_text("utt_id,target,truth,predicted\na,I,0.1,0.1\nb,I,0.3,0.2\n")
    code = cli_mod.main(["scatter", "--csv", str(csv_path), "--out-svg", str(tmp_path / "o.svg")])
    assert code == 3
    assert "internal error" in capsys.readouterr().err
