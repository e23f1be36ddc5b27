"""Waveform type and WAV file I/O.

Input contract: mono PCM WAV, 16-bit integer or 32-bit float, at the
configured sample rate (16 kHz by default). Other rates are rejected
rather than resampled; resample explicitly upstream if needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import AudioError

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    """Mono sample sequence with its sample rate.

    Samples are linear amplitude, nominally in [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1 or s.size == 0:
            raise AudioError("waveform must be a non-empty 1-D sample sequence")
        if not np.isfinite(s).all():
            raise AudioError("invalid waveform: non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def num_samples(self) -> int:
        return int(np.asarray(self.samples).shape[0])

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate


def load_wav(path, expected_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a mono WAV file into a float64 waveform in [-1, 1]."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise AudioError(f"audio file not found: {path}")
    except ValueError as e:
        raise AudioError(f"unreadable WAV file {path}: {e}")
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono audio, got {data.ndim} channels")
    if rate != expected_rate:
        raise AudioError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (no implicit resampling)")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}; use 16-bit PCM or 32-bit float")
    return Waveform(samples=samples, sample_rate=int(rate))


def save_wav_pcm16(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write samples (clipped to [-1, 1]) as 16-bit PCM."""
    path = Path(path)
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = (clipped * 32767.0).astype(np.int16)
    wavfile.write(path, sample_rate, pcm)
