"""Sidecar CLI: ``extract`` and ``finetune`` over a manifest CSV."""

from __future__ import annotations

import argparse
import sys

from .extract import extract
from .finetune import finetune
from .manifest import ManifestError, load_manifest
from .model import SidecarConfig, SidecarError


def build_config(args) -> SidecarConfig:
    return SidecarConfig(
        model=args.model,
        layer=args.layer,
        seed=args.seed,
        heads=tuple(h.strip().upper() for h in args.heads.split(",")) if hasattr(args, "heads") else ("I",),
        learning_rate=getattr(args, "learning_rate", 1e-4),
        epochs=getattr(args, "epochs", 3),
        batch_size=getattr(args, "batch_size", 4),
    )


def cmd_extract(args) -> int:
    cfg = build_config(args)
    utts = load_manifest(args.manifest)
    if args.split != "all":
        utts = [u for u in utts if u.split == args.split]
    if not utts:
        raise ManifestError(f"no utterances in split '{args.split}'")

    def progress(done, total):
        print(f"embedded {done}/{total}", flush=True)

    written = extract(utts, cfg, args.out, weights_dir=args.weights, progress=progress)
    print(f"wrote {len(written)} MTIE files to {args.out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = build_config(args)
    utts = [u for u in load_manifest(args.manifest) if u.split == "train"]
    if not utts:
        raise ManifestError("no train-split utterances to fine-tune on")

    def heartbeat(rec):
        terms = " ".join(f"{k}={v:.5f}" for k, v in rec.items() if k != "epoch")
        print(f"epoch {rec['epoch']}/{cfg.epochs} {terms}", flush=True)

    records = finetune(utts, cfg, args.out_weights, heartbeat=heartbeat)
    print(f"fine-tuned on {len(utts)} utterances; weights in {args.out_weights}")
    final = records[-1]
    print("final " + " ".join(f"{k}={v:.5f}" for k, v in final.items() if k != "epoch"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mti-sidecar", description="SSL embedding sidecar")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--manifest", required=True)
        p.add_argument("--model", default="tiny-seeded", help="'tiny-seeded' or a local/hub model id")
        p.add_argument("--layer", type=int, default=-1, help="hidden layer to export (-1 = final)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("extract", help="write one MTIE file per utterance")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=None, help="fine-tuned weights directory")
    p.add_argument("--split", default="all", choices=["train", "test", "all"])
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("finetune", help="fine-tune the backbone with score head(s)")
    add_common(p)
    p.add_argument("--heads", default="I", help="I or I,W,S")
    p.add_argument("--learning-rate", type=float, default=1e-4, dest="learning_rate")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=4, dest="batch_size")
    p.add_argument("--out-weights", required=True)
    p.set_defaults(func=cmd_finetune)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ManifestError, SidecarError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
