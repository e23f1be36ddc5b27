"""Score-head fine-tuning of the SSL backbone.

Pipeline per utterance: frame embeddings -> mean pooling -> one linear layer
per head. Single-head mode regresses the intelligibility label only; the
three-head mode adds WER and STOI heads. The loss is the utterance-level
mean squared error summed over heads, and all backbone parameters train.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .manifest import Utterance
from .model import SidecarConfig, SidecarError, load_backbone, load_wav

log = logging.getLogger(__name__)


class PooledScorer(nn.Module):
    def __init__(self, backbone, heads: tuple[str, ...], layer: int):
        super().__init__()
        self.backbone = backbone
        self.layer = layer
        d = backbone.config.hidden_size
        self.heads = nn.ModuleDict({t: nn.Linear(d, 1) for t in heads})

    def pooled(self, batch: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        out = self.backbone(batch, output_hidden_states=True)
        hidden = out.hidden_states[self.layer]  # (B, T, d)
        feat_lens = self.backbone._get_feat_extract_output_lengths(lengths).to(torch.long)
        mask = torch.arange(hidden.shape[1], device=hidden.device)[None, :] < feat_lens[:, None]
        mask = mask.unsqueeze(-1).to(hidden.dtype)
        return (hidden * mask).sum(dim=1) / mask.sum(dim=1)

    def forward(self, batch: torch.Tensor, lengths: torch.Tensor) -> dict[str, torch.Tensor]:
        mean = self.pooled(batch, lengths)
        return {t: head(mean).squeeze(-1) for t, head in self.heads.items()}


def _collate(utts: list[Utterance]) -> tuple[torch.Tensor, torch.Tensor]:
    waves = [load_wav(u.wav_path) for u in utts]
    lengths = torch.tensor([len(w) for w in waves], dtype=torch.long)
    batch = torch.zeros(len(waves), int(lengths.max()), dtype=torch.float32)
    for i, w in enumerate(waves):
        batch[i, : len(w)] = torch.tensor(w)
    return batch, lengths


def finetune(utts: list[Utterance], cfg: SidecarConfig, out_dir, heartbeat=None) -> list[dict]:
    """Fine-tune the backbone plus head(s); returns the per-epoch MSE log.

    Saves weights and a config record under ``out_dir`` for later extraction.
    """
    for u in utts:
        for t in cfg.heads:
            if u.label(t) is None:
                raise SidecarError(f"utterance {u.utt_id} is missing the label for head {t}")
    torch.manual_seed(cfg.seed)
    backbone = load_backbone(cfg)
    backbone.train()
    scorer = PooledScorer(backbone, tuple(cfg.heads), cfg.layer)
    optimizer = torch.optim.Adam(scorer.parameters(), lr=cfg.learning_rate)

    labels = {t: torch.tensor([u.label(t) for u in utts], dtype=torch.float32) for t in cfg.heads}
    order = np.random.default_rng(cfg.seed).permutation(len(utts))

    records: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        sums = {t: 0.0 for t in cfg.heads}
        for start in range(0, len(utts), cfg.batch_size):
            idx = [int(i) for i in order[start : start + cfg.batch_size]]
            batch, lengths = _collate([utts[i] for i in idx])
            scores = scorer(batch, lengths)
            losses = {t: torch.mean((scores[t] - labels[t][idx]) ** 2) for t in cfg.heads}
            total = sum(losses.values())
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            for t in cfg.heads:
                sums[t] += float(losses[t].detach()) * len(idx)
        record = {"epoch": epoch}
        record.update({f"mse_{t}": sums[t] / len(utts) for t in cfg.heads})
        records.append(record)
        if heartbeat is not None:
            heartbeat(record)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(backbone.state_dict(), out_dir / "backbone.pt")
    torch.save(scorer.heads.state_dict(), out_dir / "heads.pt")
    with open(out_dir / "finetune.json", "w") as f:
        json.dump(
            {
                "model": cfg.model,
                "layer": cfg.layer,
                "seed": cfg.seed,
                "heads": list(cfg.heads),
                "learning_rate": cfg.learning_rate,
                "epochs": cfg.epochs,
                "batch_size": cfg.batch_size,
                "log": records,
            },
            f,
            indent=2,
        )
    return records


def load_finetuned_backbone(cfg: SidecarConfig, weights_dir):
    weights_dir = Path(weights_dir)
    state_path = weights_dir / "backbone.pt"
    if not state_path.is_file():
        raise SidecarError(f"no fine-tuned backbone at {state_path}")
    backbone = load_backbone(cfg)
    backbone.load_state_dict(torch.load(state_path, weights_only=True))
    backbone.eval()
    return backbone
