"""Multi-target scoring network.

Pipeline: per-branch input stage (log power spectra, learnable filter bank,
external embeddings) -> conv stack striding over frequency only -> BLSTM ->
shared fully connected layer -> one attention head per target, each emitting
per-frame scores whose masked global average is the utterance score.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ModelError
from .features import FrameFeatures, lfb_init, StftConfig

TARGETS = ("I", "W", "S")
BRANCHES = ("PS", "LFB", "SSL")

_PS_LOG_EPS = 1e-10  # floor before log-compressing the power branch
_LFB_FLOOR_EPS = 1e-8


def deterministic_requested() -> bool:
    return os.environ.get("MTI_DETERMINISTIC", "") == "1"


def enable_determinism(seed: int = 0) -> None:
    """Single-threaded, deterministic-kernel torch execution."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


@dataclass
class ModelConfig:
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    conv_kernel: tuple[int, int] = (3, 3)
    freq_stride: int = 3
    blstm_hidden: int = 128
    shared_fc: int = 128
    attn_dim: int = 128
    active_targets: tuple[str, ...] = ("I", "W", "S")
    frame_activation: str = "sigmoid"  # sigmoid | linear
    seed: int = 0
    # feature geometry
    branches: tuple[str, ...] = ("PS", "LFB", "SSL")
    ps_bins: int = 257
    lfb_filters: int = 40
    ssl_dim: int = 64
    sample_rate: int = 16000
    normalize_inputs: bool = True

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.conv_kernel = tuple(int(k) for k in self.conv_kernel)
        self.active_targets = tuple(t for t in TARGETS if t in set(self.active_targets))
        self.branches = tuple(b for b in BRANCHES if b in set(self.branches))
        if not self.conv_channels:
            raise ModelError("conv_channels must be non-empty")
        if not self.active_targets:
            raise ModelError("at least one active target required")
        if not self.branches:
            raise ModelError("at least one feature branch required")
        if self.frame_activation not in ("sigmoid", "linear"):
            raise ModelError(f"unknown frame_activation '{self.frame_activation}'")
        if "SSL" in self.branches and self.ssl_dim < 1:
            raise ModelError("ssl_dim must be >= 1 when the SSL branch is active")

    @property
    def needs_ps(self) -> bool:
        return "PS" in self.branches or "LFB" in self.branches

    def to_items(self) -> dict[str, str]:
        return {
            "conv_channels": ",".join(str(c) for c in self.conv_channels),
            "conv_kernel": ",".join(str(k) for k in self.conv_kernel),
            "freq_stride": str(self.freq_stride),
            "blstm_hidden": str(self.blstm_hidden),
            "shared_fc": str(self.shared_fc),
            "attn_dim": str(self.attn_dim),
            "active_targets": ",".join(self.active_targets),
            "frame_activation": self.frame_activation,
            "seed": str(self.seed),
            "branches": ",".join(self.branches),
            "ps_bins": str(self.ps_bins),
            "lfb_filters": str(self.lfb_filters),
            "ssl_dim": str(self.ssl_dim),
            "sample_rate": str(self.sample_rate),
            "normalize_inputs": str(int(self.normalize_inputs)),
        }

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "ModelConfig":
        return cls(
            conv_channels=tuple(int(c) for c in items["conv_channels"].split(",")),
            conv_kernel=tuple(int(k) for k in items["conv_kernel"].split(",")),
            freq_stride=int(items["freq_stride"]),
            blstm_hidden=int(items["blstm_hidden"]),
            shared_fc=int(items["shared_fc"]),
            attn_dim=int(items["attn_dim"]),
            active_targets=tuple(t for t in items["active_targets"].split(",") if t),
            frame_activation=items["frame_activation"],
            seed=int(items["seed"]),
            branches=tuple(b for b in items["branches"].split(",") if b),
            ps_bins=int(items["ps_bins"]),
            lfb_filters=int(items["lfb_filters"]),
            ssl_dim=int(items["ssl_dim"]),
            sample_rate=int(items["sample_rate"]),
            normalize_inputs=items["normalize_inputs"] == "1",
        )


@dataclass
class ForwardOutput:
    """Per-task frame scores and their global-average-pooled utterance score."""

    frame_scores: dict[str, np.ndarray]
    utt_scores: dict[str, float]


def gap(frame_scores) -> float:
    """Global average pooling: the arithmetic mean of the frame scores."""
    v = np.asarray(frame_scores, dtype=np.float64)
    if v.size == 0:
        raise ModelError("gap of empty frame-score sequence")
    return float(np.mean(v))


class TaskHead(nn.Module):
    """Scaled multiplicative self-attention with residual, then a 1-unit FC."""

    def __init__(self, d_model: int, attn_dim: int):
        super().__init__()
        self.attn_dim = attn_dim
        self.query = nn.Linear(d_model, attn_dim, bias=False)
        self.key = nn.Linear(d_model, attn_dim, bias=False)
        self.value = nn.Linear(d_model, d_model, bias=False)
        self.out = nn.Linear(d_model, 1)

    def attention_map(self, h: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        scores = self.query(h) @ self.key(h).transpose(-2, -1) / math.sqrt(self.attn_dim)
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None, :], float("-inf"))
        return torch.softmax(scores, dim=-1)

    def attend(self, h: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        return self.attention_map(h, mask) @ self.value(h) + h

    def forward(self, h: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        return self.out(self.attend(h, mask)).squeeze(-1)


class MultiTargetNet(nn.Module):
    """The scoring network; construct via init_params for seeded weights.

    The acoustic branches (PS, LFB) are concatenated and run through the
    conv stack; the embedding branch joins the conv output at the BLSTM
    input, so external representations are never convolved.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        kh, kw = cfg.conv_kernel

        if "LFB" in cfg.branches:
            self.lfb_weight = nn.Parameter(torch.zeros(cfg.lfb_filters, cfg.ps_bins))

        self.acoustic_width = (cfg.ps_bins if "PS" in cfg.branches else 0) + (
            cfg.lfb_filters if "LFB" in cfg.branches else 0
        )
        blstm_in = cfg.ssl_dim if "SSL" in cfg.branches else 0
        convs = []
        if self.acoustic_width > 0:
            in_ch = 1
            width = self.acoustic_width
            for out_ch in cfg.conv_channels:
                convs.append(
                    nn.Conv2d(in_ch, out_ch, (kh, kw), stride=(1, cfg.freq_stride), padding=(kh // 2, kw // 2))
                )
                width = (width + 2 * (kw // 2) - kw) // cfg.freq_stride + 1
                in_ch = out_ch
            self.conv_out_width = width
            blstm_in += in_ch * width
        else:
            self.conv_out_width = 0
        self.convs = nn.ModuleList(convs)

        self.blstm = nn.LSTM(
            input_size=blstm_in,
            hidden_size=cfg.blstm_hidden,
            batch_first=True,
            bidirectional=True,
        )
        self.shared = nn.Linear(2 * cfg.blstm_hidden, cfg.shared_fc)
        self.heads = nn.ModuleDict({t: TaskHead(cfg.shared_fc, cfg.attn_dim) for t in cfg.active_targets})

        # per-frequency input normalization statistics (identity until fitted)
        if "PS" in cfg.branches:
            self.register_buffer("ps_log_mean", torch.zeros(cfg.ps_bins))
            self.register_buffer("ps_log_std", torch.ones(cfg.ps_bins))
        if "LFB" in cfg.branches:
            self.register_buffer("lfb_mean", torch.zeros(cfg.lfb_filters))
            self.register_buffer("lfb_std", torch.ones(cfg.lfb_filters))

    def set_normalization(self, stats: dict[str, np.ndarray]) -> None:
        for name, value in stats.items():
            buf = getattr(self, name, None)
            if buf is None:
                raise ModelError(f"unknown normalization buffer '{name}'")
            with torch.no_grad():
                buf.copy_(torch.as_tensor(value, dtype=buf.dtype))

    def project_constraints(self) -> None:
        """Clamp filter-bank weights to be non-negative after an update.

        Filters combine power bins, so negative weights are meaningless and
        would let the log argument in the LFB branch go negative.
        """
        if hasattr(self, "lfb_weight"):
            with torch.no_grad():
                self.lfb_weight.clamp_(min=0.0)

    def _input_branches(
        self, ps: torch.Tensor | None, ssl: torch.Tensor | None
    ) -> tuple[torch.Tensor | None, torch.Tensor | None]:
        """Normalized acoustic stack (PS ⊕ LFB) and the embedding branch."""
        cfg = self.cfg
        parts = []
        if cfg.needs_ps:
            if ps is None:
                raise ModelError("model requires a power spectrogram input")
            if ps.shape[-1] != cfg.ps_bins:
                raise ModelError(f"width mismatch: spectrogram has {ps.shape[-1]} bins, model expects {cfg.ps_bins}")
        if "PS" in cfg.branches:
            z = torch.log(ps + _PS_LOG_EPS)
            if cfg.normalize_inputs:
                z = (z - self.ps_log_mean) / self.ps_log_std
            parts.append(z)
        if "LFB" in cfg.branches:
            e = torch.log(_LFB_FLOOR_EPS + ps @ self.lfb_weight.T)
            if cfg.normalize_inputs:
                e = (e - self.lfb_mean) / self.lfb_std
            parts.append(e)
        if "SSL" in cfg.branches:
            if ssl is None:
                raise ModelError("model requires an SSL embedding input")
            if ssl.shape[-1] != cfg.ssl_dim:
                raise ModelError(f"width mismatch: embeddings have {ssl.shape[-1]} dims, model expects {cfg.ssl_dim}")
        else:
            ssl = None
        acoustic = torch.cat(parts, dim=-1) if parts else None
        return acoustic, ssl

    def forward(
        self,
        ps: torch.Tensor | None,
        ssl: torch.Tensor | None = None,
        mask: torch.Tensor | None = None,
    ) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
        """Batched forward.

        ps: (B, F, ps_bins) non-negative power spectra, ssl: (B, F, ssl_dim),
        mask: (B, F) bool, true on real frames. Returns, per active target,
        (frame_scores (B, F), utt_score (B,)).
        """
        acoustic, ssl = self._input_branches(ps, ssl)
        ref = acoustic if acoustic is not None else ssl
        B, F, _ = ref.shape
        if mask is None:
            mask = torch.ones(B, F, dtype=torch.bool, device=ref.device)
        lengths = mask.sum(dim=1)
        if (lengths < 1).any():
            raise ModelError("every utterance in a batch needs at least one valid frame")

        parts = []
        if acoustic is not None:
            # padded rows must stay exactly zero through the conv stack,
            # otherwise the time kernel would leak padding into the last
            # valid frames
            x = (acoustic * mask.unsqueeze(-1)).unsqueeze(1)
            mask4 = mask[:, None, :, None].to(x.dtype)
            for conv in self.convs:
                x = torch.relu(conv(x)) * mask4
            parts.append(x.permute(0, 2, 1, 3).flatten(2))  # (B, F, C * width)
        if ssl is not None:
            parts.append(ssl * mask.unsqueeze(-1).to(ssl.dtype))
        x = torch.cat(parts, dim=-1)

        packed = nn.utils.rnn.pack_padded_sequence(
            x, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        h, _ = self.blstm(packed)
        h, _ = nn.utils.rnn.pad_packed_sequence(h, batch_first=True, total_length=F)
        h = torch.relu(self.shared(h))

        out: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
        fmask = mask.to(h.dtype)
        for t in self.cfg.active_targets:
            logits = self.heads[t](h, mask)
            frames = torch.sigmoid(logits) if self.cfg.frame_activation == "sigmoid" else logits
            frames = frames * fmask
            utt = frames.sum(dim=1) / lengths.to(h.dtype)
            out[t] = (frames, utt)
        return out


def _fan(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 1:
        return shape[0], shape[0]
    receptive = 1
    for s in shape[2:]:
        receptive *= s
    return shape[1] * receptive, shape[0] * receptive


def init_params(cfg: ModelConfig, stft_cfg: StftConfig | None = None) -> MultiTargetNet:
    """Seed-deterministic network initialization.

    Weights are Glorot-uniform (scaled by fan-in/fan-out of the stored
    matrix), biases zero, and the filter-bank weights start as mel-spaced
    triangles over 0..Nyquist.
    """
    net = MultiTargetNet(cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name == "lfb_weight":
                continue
            if name.endswith("bias") or "bias" in name.split(".")[-1]:
                p.zero_()
            else:
                fan_in, fan_out = _fan(tuple(p.shape))
                a = math.sqrt(6.0 / (fan_in + fan_out))
                p.uniform_(-a, a, generator=gen)
        if "LFB" in cfg.branches:
            if stft_cfg is None:
                stft_cfg = StftConfig(fft_size=2 * (cfg.ps_bins - 1), win_length=2 * (cfg.ps_bins - 1), hop_length=(cfg.ps_bins - 1))
            if stft_cfg.n_bins != cfg.ps_bins:
                raise ModelError(f"stft config gives {stft_cfg.n_bins} bins, model expects {cfg.ps_bins}")
            bank = lfb_init(cfg.lfb_filters, stft_cfg, cfg.sample_rate, floor_eps=_LFB_FLOOR_EPS)
            net.lfb_weight.copy_(torch.as_tensor(bank.weights, dtype=net.lfb_weight.dtype))
    return net


def forward_utterance(net: MultiTargetNet, feat: FrameFeatures) -> ForwardOutput:
    """Run a single utterance through the network (no gradients)."""
    cfg = net.cfg
    dtype = next(net.parameters()).dtype
    ps = ssl = None
    if cfg.needs_ps:
        if feat.ps is None:
            raise ModelError("features lack the power-spectrogram branch required by the model")
        ps = torch.as_tensor(feat.ps.frames, dtype=dtype).unsqueeze(0)
    if "SSL" in cfg.branches:
        if feat.ssl is None:
            raise ModelError("features lack the SSL branch required by the model")
        ssl = torch.as_tensor(np.asarray(feat.ssl), dtype=dtype).unsqueeze(0)
    net.eval()
    with torch.no_grad():
        out = net(ps, ssl)
    return ForwardOutput(
        frame_scores={t: frames[0].numpy().copy() for t, (frames, _) in out.items()},
        utt_scores={t: float(utt[0]) for t, (_, utt) in out.items()},
    )
