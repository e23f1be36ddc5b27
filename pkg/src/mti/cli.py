"""Command-line operator surface.

Subcommands: gen-synth, extract, train, eval, predict, scatter. All accept
``--config FILE`` (key=value lines) plus repeated ``--set key=value``
overrides. Setting MTI_DETERMINISTIC=1 forces deterministic single-threaded
execution. User errors exit 2 with one diagnostic line; internal failures
exit 3.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .audio import load_wav
from .config import apply_overrides, int_tuple, load_config, str_tuple, take
from .embeddings import EmbeddingSeq, align_to_frames, read_embeddings, write_embeddings
from .errors import MtiError
from .features import (
    FrameFeatures,
    StftConfig,
    lfb_forward,
    lfb_init,
    mel_surrogate_embeddings,
    stft_power,
)
from .manifest import NOISE_KINDS, SynthConfig, gen_synthetic, load_manifest
from .metrics import ScorePair
from .model import (
    ModelConfig,
    deterministic_requested,
    enable_determinism,
    forward_utterance,
)
from .reporting import (
    format_metric_table,
    read_pairs_csv,
    scatter_svg,
    write_pairs_csv,
    write_report_json,
)
from .training import (
    LossConfig,
    OptimConfig,
    load_model,
    predict_scores,
    prepare_utterances,
    score_pairs,
    train,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# config -> dataclass builders
# ---------------------------------------------------------------------------

def build_stft_config(items) -> StftConfig:
    return StftConfig(
        win_length=take(items, "stft.win_length", 512, int),
        hop_length=take(items, "stft.hop_length", 256, int),
        fft_size=take(items, "stft.fft_size", 512, int),
        window=take(items, "stft.window", "hann"),
    )


def build_synth_config(items) -> SynthConfig:
    return SynthConfig(
        n_utts=take(items, "synth.n_utts", 100, int),
        duration_s=take(items, "synth.duration_s", 2.0, float),
        snr_db_range=(take(items, "synth.snr_lo", -10.0, float), take(items, "synth.snr_hi", 10.0, float)),
        noise_kinds=take(items, "synth.noise_kinds", NOISE_KINDS, str_tuple),
        seed=take(items, "synth.seed", 0, int),
        sample_rate=take(items, "audio.sample_rate", 16000, int),
        test_fraction=take(items, "synth.test_fraction", 1.0 / 6.0, float),
        label_noise_std=take(items, "synth.label_noise_std", 0.0, float),
    )


def build_model_config(items, stft_cfg: StftConfig, targets: tuple[str, ...], ssl_dim: int | None) -> ModelConfig:
    return ModelConfig(
        conv_channels=take(items, "model.conv_channels", (16, 32, 64, 128), int_tuple),
        conv_kernel=take(items, "model.conv_kernel", (3, 3), int_tuple),
        freq_stride=take(items, "model.freq_stride", 3, int),
        blstm_hidden=take(items, "model.blstm_hidden", 128, int),
        shared_fc=take(items, "model.shared_fc", 128, int),
        attn_dim=take(items, "model.attn_dim", 128, int),
        active_targets=targets,
        frame_activation=take(items, "model.frame_activation", "sigmoid"),
        seed=take(items, "model.seed", 0, int),
        branches=take(items, "model.branches", ("PS", "LFB", "SSL"), str_tuple),
        ps_bins=stft_cfg.n_bins,
        lfb_filters=take(items, "model.lfb_filters", 40, int),
        ssl_dim=ssl_dim if ssl_dim is not None else take(items, "model.ssl_dim", 64, int),
        sample_rate=take(items, "audio.sample_rate", 16000, int),
        normalize_inputs=take(items, "model.normalize_inputs", True, bool),
    )


def build_loss_config(items, targets: tuple[str, ...]) -> LossConfig:
    return LossConfig(
        alpha_i=take(items, "loss.alpha_i", 1.0, float),
        alpha_w=take(items, "loss.alpha_w", 1.0, float),
        alpha_s=take(items, "loss.alpha_s", 1.0, float),
        active_targets=targets,
    )


def build_optim_config(items) -> OptimConfig:
    return OptimConfig(
        algorithm=take(items, "optim.algorithm", "adam"),
        learning_rate=take(items, "optim.learning_rate", 1e-4, float),
        beta1=take(items, "optim.beta1", 0.9, float),
        beta2=take(items, "optim.beta2", 0.999, float),
        eps=take(items, "optim.eps", 1e-8, float),
        momentum=take(items, "optim.momentum", 0.0, float),
        epochs=take(items, "optim.epochs", 30, int),
        batch_size=take(items, "optim.batch_size", 4, int),
        patience=take(items, "optim.patience", 10, int),
        grad_clip=take(items, "optim.grad_clip", 5.0, float),
        seed=take(items, "optim.seed", 0, int),
        val_fraction=take(items, "optim.val_fraction", 0.1, float),
    )


def parse_targets(raw: str) -> tuple[str, ...]:
    targets = tuple(t.strip().upper() for t in raw.split(",") if t.strip())
    bad = set(targets) - {"I", "W", "S"}
    if bad or not targets:
        raise MtiError(f"--targets must be a comma list over I,W,S; got '{raw}'")
    return targets


def infer_ssl_dim(embeddings_dir, records) -> int:
    first = Path(embeddings_dir) / f"{records[0].utt_id}.mtie"
    if not first.is_file():
        raise MtiError(f"cannot infer embedding dim: {first} not found")
    return read_embeddings(first).dim


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    items = apply_overrides(load_config(args.config), args.set)
    cfg = build_synth_config(items)
    out_dir = Path(args.out)

    def progress(done, total):
        print(f"generated {done}/{total} utterances", flush=True)

    records, manifest_path = gen_synthetic(cfg, out_dir, progress=progress)
    n_test = sum(1 for r in records if r.split == "test")
    print(f"wrote {len(records)} utterances ({len(records) - n_test} train / {n_test} test)")
    print(f"manifest: {manifest_path}")
    return 0


def cmd_extract(args) -> int:
    items = apply_overrides(load_config(args.config), args.set)
    stft_cfg = build_stft_config(items)
    sample_rate = take(items, "audio.sample_rate", 16000, int)
    wanted = tuple(f.strip() for f in args.features.split(",") if f.strip())
    bad = set(wanted) - {"ps", "lfb", "ssl-surrogate"}
    if bad or not wanted:
        raise MtiError(f"--features must name ps, lfb, and/or ssl-surrogate; got '{args.features}'")
    records = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    bank = None
    if "lfb" in wanted:
        bank = lfb_init(take(items, "model.lfb_filters", 40, int), stft_cfg, sample_rate)
    n_mels = take(items, "extract.surrogate_mels", 64, int)
    surrogate_rate = take(items, "extract.surrogate_rate", 50.0, float)

    for i, r in enumerate(records, start=1):
        w = load_wav(r.wav_path, sample_rate)
        if "ps" in wanted or "lfb" in wanted:
            ps = stft_power(w, stft_cfg)
            if "ps" in wanted:
                seq = EmbeddingSeq(vectors=ps.frames.astype("float32"), frame_rate=ps.frame_rate, source_tag="ps")
                write_embeddings(seq, out_dir / f"{r.utt_id}.ps.mtie")
            if "lfb" in wanted:
                feats = lfb_forward(ps, bank).astype("float32")
                seq = EmbeddingSeq(vectors=feats, frame_rate=ps.frame_rate, source_tag="lfb")
                write_embeddings(seq, out_dir / f"{r.utt_id}.lfb.mtie")
        if "ssl-surrogate" in wanted:
            seq = mel_surrogate_embeddings(w, n_mels=n_mels, frame_rate=surrogate_rate)
            write_embeddings(seq, out_dir / f"{r.utt_id}.mtie")
        if i % 100 == 0:
            print(f"extracted {i}/{len(records)}", flush=True)
    print(f"wrote features for {len(records)} utterances to {out_dir}")
    return 0


def cmd_train(args) -> int:
    items = apply_overrides(load_config(args.config), args.set)
    stft_cfg = build_stft_config(items)
    targets = parse_targets(args.targets)
    records = [r for r in load_manifest(args.manifest) if r.split == "train"]
    if not records:
        raise MtiError(f"manifest {args.manifest} has no train-split records")

    branches = take(items, "model.branches", ("PS", "LFB", "SSL"), str_tuple)
    ssl_dim = None
    if "SSL" in branches:
        if args.embeddings_dir is None:
            raise MtiError("model uses the SSL branch; pass --embeddings-dir")
        if "model.ssl_dim" not in items:
            ssl_dim = infer_ssl_dim(args.embeddings_dir, records)
    model_cfg = build_model_config(items, stft_cfg, targets, ssl_dim)
    loss_cfg = build_loss_config(items, targets)
    optim_cfg = build_optim_config(items)

    def heartbeat(rec):
        vals = " ".join(
            f"val_lcc_{t}={rec[f'val_lcc_{t}']:.3f}" for t in targets if rec.get(f"val_lcc_{t}") is not None
        )
        print(f"epoch {rec['epoch']}/{optim_cfg.epochs} O={rec['O']:.5f} {vals}", flush=True)

    result = train(
        records,
        stft_cfg,
        model_cfg,
        loss_cfg,
        optim_cfg,
        embeddings_dir=args.embeddings_dir,
        warm_start=args.warm_start,
        ckpt_path=args.out_ckpt,
        log_path=args.out_log,
        heartbeat=heartbeat,
    )
    if result.diverged:
        print("training diverged; kept the last good checkpoint")
    print(f"best epoch: {result.best_epoch}")
    try:
        from .metrics import evaluate_pairs

        report = {t: evaluate_pairs(ps) for t, ps in result.val_pairs.items() if len(ps) >= 2}
        if report:
            print("final validation metrics:")
            print(format_metric_table(report))
    except MtiError as e:
        log.warning("validation metrics unavailable: %s", e)
    print(f"checkpoint: {args.out_ckpt}")
    return 0


def _eval_pairs(args, net, stft_cfg, records) -> dict[str, list[ScorePair]]:
    targets = net.cfg.active_targets
    if args.oracle:
        pairs = {}
        for t in targets:
            field = {"I": "intelligibility", "W": "wer", "S": "stoi"}[t]
            pairs[t] = [
                ScorePair(truth=getattr(r, field), predicted=getattr(r, field), utt_id=r.utt_id)
                for r in records
                if getattr(r, field) is not None
            ]
        return pairs
    prepared = prepare_utterances(records, stft_cfg, net.cfg, args.embeddings_dir)
    predictions = predict_scores(net, prepared)
    return score_pairs(prepared, predictions, targets)


def cmd_eval(args) -> int:
    if deterministic_requested():
        enable_determinism()
    net, stft_cfg, _, _ = load_model(args.ckpt)
    records = [r for r in load_manifest(args.manifest) if args.split == "all" or r.split == args.split]
    if not records:
        raise MtiError(f"manifest {args.manifest} has no records in split '{args.split}'")
    pairs = _eval_pairs(args, net, stft_cfg, records)
    for t in net.cfg.active_targets:
        if len(pairs.get(t, [])) < 2:
            raise MtiError(f"split '{args.split}' has too few ground-truth labels for target {t}")
    from .metrics import evaluate_pairs

    report = {t: evaluate_pairs(ps) for t, ps in pairs.items()}
    print(format_metric_table(report))
    if args.out_json:
        write_report_json(pairs, args.out_json)
        print(f"report: {args.out_json}")
    if args.out_csv:
        write_pairs_csv(pairs, args.out_csv)
        print(f"pairs: {args.out_csv}")
    return 0


def cmd_predict(args) -> int:
    if deterministic_requested():
        enable_determinism()
    net, stft_cfg, _, _ = load_model(args.ckpt)
    w = load_wav(args.wav, net.cfg.sample_rate)
    ps = stft_power(w, stft_cfg)
    ssl = None
    if "SSL" in net.cfg.branches:
        if args.embeddings is None:
            raise MtiError("model uses the SSL branch; pass --embeddings <file.mtie>")
        seq = read_embeddings(args.embeddings)
        ssl = align_to_frames(seq, ps.num_frames, stft_cfg.frame_rate(net.cfg.sample_rate)).astype("float32")
    active = ("PS",) + (("SSL",) if ssl is not None else ())
    feat = FrameFeatures(ps=ps, lfb=None, ssl=ssl, active_branches=active)
    out = forward_utterance(net, feat)
    payload = {"wav": str(args.wav), "scores": out.utt_scores}
    if args.frames:
        payload["frame_scores"] = {t: [float(x) for x in v] for t, v in out.frame_scores.items()}
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_scatter(args) -> int:
    pairs_by_target = read_pairs_csv(args.csv)
    out = Path(args.out_svg)
    suffix = out.suffix or ".svg"
    written = []
    for target, pairs in sorted(pairs_by_target.items()):
        path = out.with_name(f"{out.stem}.{target}{suffix}")
        scatter_svg(pairs, target, path)
        written.append(path)
    for p in written:
        print(f"wrote {p}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mti", description="Multi-target speech intelligibility toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")

    p = sub.add_parser("gen-synth", help="generate a synthetic labelled corpus")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("extract", help="cache features / surrogate embeddings as MTIE files")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="comma list: ps,lfb,ssl-surrogate")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a model")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings-dir", default=None)
    p.add_argument("--targets", default="I,W,S", help="e.g. I or I,W or I,W,S")
    p.add_argument("--warm-start", default=None, help="checkpoint to transfer from")
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--out-log", default=None, help="JSONL per-epoch log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings-dir", default=None)
    p.add_argument("--split", default="test", choices=["train", "test", "all"])
    p.add_argument("--out-json", default=None)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--oracle", action="store_true", help="score the truth against itself (sanity mode)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="score a single waveform")
    add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--embeddings", default=None, help="MTIE file for the SSL branch")
    p.add_argument("--frames", action="store_true", help="include frame-level scores")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("scatter", help="render truth-vs-prediction scatter SVGs")
    add_common(p)
    p.add_argument("--csv", required=True, help="per-utterance pairs CSV from eval")
    p.add_argument("--out-svg", required=True, help="output path; the target letter is inserted before the suffix")
    p.set_defaults(func=cmd_scatter)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MtiError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # internal invariant violation
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
