"""SSL backbone loading and frame-embedding extraction.

The default backbone is a small seeded wav2vec2-style encoder built locally
(this environment has no model hub access); point ``model`` at a local path
or hub id to load real pretrained weights instead. Embeddings are taken
from a configurable hidden layer, final by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.io import wavfile
from transformers import AutoModel, Wav2Vec2Config, Wav2Vec2Model

TINY_SEEDED = "tiny-seeded"
SAMPLE_RATE = 16000


class SidecarError(Exception):
    pass


@dataclass
class SidecarConfig:
    model: str = TINY_SEEDED
    layer: int = -1  # index into hidden_states; -1 = final layer
    device: str = "cpu"
    seed: int = 0
    heads: tuple[str, ...] = ("I",)  # ("I",) or ("I", "W", "S")
    learning_rate: float = 1e-4
    epochs: int = 3
    batch_size: int = 4

    def __post_init__(self):
        if tuple(self.heads) not in (("I",), ("I", "W", "S")):
            raise SidecarError(f"heads must be I or I,W,S; got {self.heads}")
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise SidecarError("invalid fine-tuning hyperparameters")


def _tiny_config() -> Wav2Vec2Config:
    return Wav2Vec2Config(
        hidden_size=64,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=128,
        conv_dim=(32, 32, 32, 32, 32, 32, 32),
        vocab_size=32,
    )


def load_backbone(cfg: SidecarConfig) -> Wav2Vec2Model:
    if cfg.model == TINY_SEEDED:
        torch.manual_seed(cfg.seed)
        net = Wav2Vec2Model(_tiny_config())
    else:
        try:
            net = AutoModel.from_pretrained(cfg.model)
        except Exception as e:
            raise SidecarError(f"cannot load SSL model '{cfg.model}': {e}")
    net.to(cfg.device)
    net.eval()
    n_states = net.config.num_hidden_layers + 1
    if not -n_states <= cfg.layer < n_states:
        raise SidecarError(f"layer {cfg.layer} out of range for {n_states} hidden states")
    return net


def frame_rate_hz(net: Wav2Vec2Model, sample_rate: int = SAMPLE_RATE) -> float:
    stride = math.prod(net.config.conv_stride)
    return sample_rate / stride


def load_wav(path) -> np.ndarray:
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise SidecarError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    if data.ndim != 1:
        raise SidecarError(f"{path}: expected mono audio")
    if data.dtype == np.int16:
        return (data / 32768.0).astype(np.float32)
    if data.dtype == np.float32:
        return data
    raise SidecarError(f"{path}: unsupported sample format {data.dtype}")


def embed(net: Wav2Vec2Model, samples: np.ndarray, layer: int) -> np.ndarray:
    """Frame embeddings of one utterance from the selected hidden layer."""
    with torch.no_grad():
        out = net(
            torch.tensor(samples, dtype=torch.float32, device=next(net.parameters()).device).unsqueeze(0),
            output_hidden_states=True,
        )
    return out.hidden_states[layer][0].cpu().numpy().astype(np.float32)
