"""Low-level acoustic features: STFT power spectra and learnable filter banks.

The filter bank is realized as a trainable linear projection of the power
spectrogram, initialized to mel-spaced triangles and log-compressed. During
training the weights are owned by the model; the functions here define the
reference computation and the initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .audio import Waveform
from .embeddings import EmbeddingSeq
from .errors import FeatureError

BRANCHES = ("PS", "LFB", "SSL")


@dataclass(frozen=True)
class StftConfig:
    win_length: int = 512
    hop_length: int = 256
    fft_size: int = 512
    window: str = "hann"  # hann | hamming | rect

    def __post_init__(self):
        if not 0 < self.hop_length <= self.win_length <= self.fft_size:
            raise FeatureError(
                f"need 0 < hop ({self.hop_length}) <= win ({self.win_length}) <= fft ({self.fft_size})"
            )
        if self.window not in ("hann", "hamming", "rect"):
            raise FeatureError(f"unknown window '{self.window}'")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def frame_rate(self, sample_rate: int) -> float:
        return sample_rate / self.hop_length


@dataclass
class PowerSpectrogram:
    frames: np.ndarray  # (F, n_bins), non-negative
    frame_rate: float

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class LfbBank:
    weights: np.ndarray  # (n_filters, n_bins)
    n_filters: int
    floor_eps: float = 1e-8


@dataclass
class FrameFeatures:
    """Per-frame feature stack; branches are concatenated in PS, LFB, SSL order."""

    ps: PowerSpectrogram | None
    lfb: np.ndarray | None
    ssl: np.ndarray | None
    active_branches: tuple[str, ...]

    @property
    def num_frames(self) -> int:
        for m in (self.ps.frames if self.ps is not None else None, self.lfb, self.ssl):
            if m is not None:
                return int(m.shape[0])
        raise FeatureError("no active branch")

    def stacked(self) -> np.ndarray:
        parts = []
        if "PS" in self.active_branches:
            parts.append(self.ps.frames)
        if "LFB" in self.active_branches:
            parts.append(self.lfb)
        if "SSL" in self.active_branches:
            parts.append(self.ssl)
        return np.concatenate(parts, axis=1)


def window_samples(cfg: StftConfig) -> np.ndarray:
    if cfg.window == "rect":
        return np.ones(cfg.win_length)
    # periodic windows, the usual choice for spectral analysis
    return get_window(cfg.window, cfg.win_length, fftbins=True)


def frame_count(num_samples: int, cfg: StftConfig) -> int:
    """Number of complete analysis windows: floor((n - win) / hop) + 1."""
    if num_samples < cfg.win_length:
        raise FeatureError(
            f"utterance too short: {num_samples} samples < one window of {cfg.win_length}"
        )
    return (num_samples - cfg.win_length) // cfg.hop_length + 1


def _frame_matrix(w: Waveform, cfg: StftConfig) -> np.ndarray:
    samples = np.asarray(w.samples, dtype=np.float64)
    n_frames = frame_count(samples.shape[0], cfg)
    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.win_length)[:: cfg.hop_length]
    return frames[:n_frames] * window_samples(cfg)


def stft_power(w: Waveform, cfg: StftConfig) -> PowerSpectrogram:
    """Squared-magnitude STFT, keeping bins 0 .. fft_size/2."""
    spec = np.fft.rfft(_frame_matrix(w, cfg), n=cfg.fft_size, axis=1)
    power = (spec.real**2 + spec.imag**2)
    return PowerSpectrogram(frames=power, frame_rate=cfg.frame_rate(w.sample_rate))


def stft_power_full(w: Waveform, cfg: StftConfig) -> np.ndarray:
    """Full-spectrum variant (all fft_size bins), for energy accounting."""
    spec = np.fft.fft(_frame_matrix(w, cfg), n=cfg.fft_size, axis=1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def lfb_init(n_filters: int, cfg: StftConfig, sample_rate: int, floor_eps: float = 1e-8) -> LfbBank:
    """Mel-spaced triangular filters spanning 0 .. Nyquist.

    Filter j rises from edge j to a peak at edge j+1 and falls to edge j+2,
    where the edges are n_filters + 2 equally spaced points on the mel scale.
    """
    if n_filters < 1:
        raise FeatureError("n_filters must be >= 1")
    n_bins = cfg.n_bins
    if n_filters > n_bins:
        raise FeatureError(f"n_filters {n_filters} exceeds {n_bins} spectral bins")
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_filters + 2))
    bin_freqs = np.arange(n_bins) * sample_rate / cfg.fft_size
    weights = np.zeros((n_filters, n_bins))
    for j in range(n_filters):
        lo, mid, hi = edges_hz[j], edges_hz[j + 1], edges_hz[j + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        weights[j] = np.maximum(0.0, np.minimum(rising, falling))
        if not (weights[j] > 0).any():
            raise FeatureError(f"filter {j} has empty support; reduce n_filters for this resolution")
    return LfbBank(weights=weights, n_filters=n_filters, floor_eps=floor_eps)


def lfb_forward(ps: PowerSpectrogram, bank: LfbBank) -> np.ndarray:
    """log(floor_eps + filter-bank energies), shape (F, n_filters)."""
    if ps.frames.shape[1] != bank.weights.shape[1]:
        raise FeatureError(
            f"dimension mismatch: spectrogram has {ps.frames.shape[1]} bins, bank expects {bank.weights.shape[1]}"
        )
    return np.log(bank.floor_eps + ps.frames @ bank.weights.T)


def assemble_features(
    ps: PowerSpectrogram | None,
    lfb_out: np.ndarray | None,
    ssl_aligned: np.ndarray | None,
    branches,
) -> FrameFeatures:
    """Bundle the requested branches, enforcing a shared frame count."""
    branches = tuple(b for b in BRANCHES if b in set(branches))
    if not branches:
        raise FeatureError("at least one branch must be active")
    provided = {"PS": None if ps is None else ps.frames, "LFB": lfb_out, "SSL": ssl_aligned}
    counts = {}
    for b in branches:
        if provided[b] is None:
            raise FeatureError(f"branch {b} requested but not provided")
        counts[b] = int(provided[b].shape[0])
    names = list(counts)
    for b in names[1:]:
        if counts[b] != counts[names[0]]:
            raise FeatureError(
                f"frame-count mismatch: {names[0]} has {counts[names[0]]} frames, {b} has {counts[b]}"
            )
    return FrameFeatures(
        ps=ps if "PS" in branches else None,
        lfb=lfb_out if "LFB" in branches else None,
        ssl=ssl_aligned if "SSL" in branches else None,
        active_branches=branches,
    )


def mel_surrogate_embeddings(
    w: Waveform, n_mels: int = 64, frame_rate: float = 50.0, win_length: int = 512
) -> EmbeddingSeq:
    """Log-mel features packaged as an embedding sequence.

    Stands in for self-supervised embeddings in fully synthetic pipelines:
    same container, same alignment path, no external model required.
    """
    hop = int(round(w.sample_rate / frame_rate))
    cfg = StftConfig(win_length=win_length, hop_length=hop, fft_size=win_length, window="hann")
    ps = stft_power(w, cfg)
    bank = lfb_init(n_mels, cfg, w.sample_rate)
    feats = lfb_forward(ps, bank).astype(np.float32)
    return EmbeddingSeq(vectors=feats, frame_rate=w.sample_rate / hop, source_tag="mel-surrogate")
