"""Batch extraction of frame embeddings into MTIE files keyed by utt_id."""

from __future__ import annotations

import logging
from pathlib import Path

from .finetune import load_finetuned_backbone
from .manifest import Utterance
from .model import SidecarConfig, embed, frame_rate_hz, load_backbone, load_wav
from .mtie import write_mtie

log = logging.getLogger(__name__)


def extract(utts: list[Utterance], cfg: SidecarConfig, out_dir, weights_dir=None, progress=None) -> list[Path]:
    """Write one ``<utt_id>.mtie`` per utterance.

    With ``weights_dir`` set, embeddings come from the fine-tuned backbone
    and the header tag says so; otherwise from the base model.
    """
    if weights_dir is not None:
        backbone = load_finetuned_backbone(cfg, weights_dir)
        state = "finetuned"
    else:
        backbone = load_backbone(cfg)
        state = "pretrained"
    tag = f"{cfg.model}+{state};layer={cfg.layer}"
    rate = frame_rate_hz(backbone)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, u in enumerate(utts, start=1):
        vectors = embed(backbone, load_wav(u.wav_path), cfg.layer)
        path = out_dir / f"{u.utt_id}.mtie"
        write_mtie(path, vectors, rate, tag)
        written.append(path)
        if progress is not None and i % 50 == 0:
            progress(i, len(utts))
    return written
