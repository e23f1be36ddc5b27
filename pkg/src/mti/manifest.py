"""Dataset manifests, splits, and the synthetic desk-scale corpus generator.

A manifest is a CSV with header ``utt_id,wav_path,intelligibility,wer,stoi,split``.
Label columns may be empty (absent target). ``wav_path`` is stored relative
to the manifest file where possible and resolved to an absolute path on load.

The synthetic generator substitutes for a listening-test corpus: each
utterance is a harmonic "speech surrogate" mixed with noise at a known SNR,
and the three labels are fixed logistic functions of that SNR (recorded in
a sidecar metadata file so they can be re-derived exactly).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import save_wav_pcm16
from .errors import ManifestError

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("utt_id", "wav_path", "intelligibility", "wer", "stoi", "split")
NOISE_KINDS = ("white", "pink", "babble-surrogate")

# Logistic label functions of the mixing SNR, one per target.
# form: v = 1 / (1 + exp(-(snr - midpoint) / scale)); complement flips to 1 - v.
LABEL_FUNCTIONS = {
    "intelligibility": {"form": "logistic", "midpoint": 0.0, "scale": 5.0, "complement": False},
    "wer": {"form": "logistic", "midpoint": 2.0, "scale": 5.0, "complement": True},
    "stoi": {"form": "logistic", "midpoint": -2.0, "scale": 6.0, "complement": False},
}


def eval_label_function(spec: dict, snr_db: float) -> float:
    """Evaluate one of the recorded label functions at an SNR value."""
    if spec.get("form") != "logistic":
        raise ManifestError(f"unknown label function form: {spec!r}")
    v = 1.0 / (1.0 + math.exp(-(snr_db - spec["midpoint"]) / spec["scale"]))
    return 1.0 - v if spec["complement"] else v


@dataclass
class ManifestRecord:
    utt_id: str
    wav_path: Path
    intelligibility: float | None
    wer: float | None
    stoi: float | None
    split: str  # train | test


@dataclass
class SynthConfig:
    n_utts: int
    duration_s: float = 2.0
    snr_db_range: tuple[float, float] = (-10.0, 10.0)
    noise_kinds: tuple[str, ...] = NOISE_KINDS
    seed: int = 0
    sample_rate: int = 16000
    test_fraction: float = 1.0 / 6.0
    label_noise_std: float = 0.0

    def validate(self) -> None:
        if self.n_utts < 1:
            raise ManifestError("n_utts must be >= 1")
        if self.duration_s < 0.5:
            raise ManifestError("duration_s must be >= 0.5 s")
        lo, hi = self.snr_db_range
        if not lo < hi:
            raise ManifestError(f"snr_db_range must satisfy lo < hi, got ({lo}, {hi})")
        bad = set(self.noise_kinds) - set(NOISE_KINDS)
        if bad or not self.noise_kinds:
            raise ManifestError(f"noise_kinds must be a non-empty subset of {NOISE_KINDS}, got {self.noise_kinds}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ManifestError("test_fraction must be in [0, 1)")


def _parse_label(raw: str, column: str, utt_id: str) -> float | None:
    raw = raw.strip()
    if raw == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise ManifestError(f"{utt_id}: {column} value '{raw}' is not a number")
    if not math.isfinite(value):
        raise ManifestError(f"{utt_id}: {column} value must be finite")
    if column == "wer" and value > 1.0:
        log.warning("%s: wer %.6g exceeds 1.0, clamping (insertions can inflate raw WER)", utt_id, value)
        return 1.0
    if not 0.0 <= value <= 1.0:
        raise ManifestError(f"{utt_id}: {column} value {value} outside [0, 1]")
    return value


def load_manifest(path, check_wavs: bool = True) -> list[ManifestRecord]:
    """Load and validate a manifest CSV.

    Duplicate utterance ids and out-of-range labels are errors; WER values
    above 1.0 are clamped with a logged warning.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}: expected header {','.join(MANIFEST_COLUMNS)}, got {reader.fieldnames}"
            )
        for row in reader:
            utt_id = row["utt_id"].strip()
            if not utt_id:
                raise ManifestError(f"{path}: empty utt_id")
            if utt_id in seen:
                raise ManifestError(f"duplicate utt_id '{utt_id}' in {path}")
            seen.add(utt_id)
            wav_path = Path(row["wav_path"])
            if not wav_path.is_absolute():
                wav_path = (path.parent / wav_path).resolve()
            if check_wavs and not wav_path.is_file():
                raise ManifestError(f"{utt_id}: wav file missing: {wav_path}")
            split = row["split"].strip()
            if split not in ("train", "test"):
                raise ManifestError(f"{utt_id}: split must be 'train' or 'test', got '{split}'")
            records.append(
                ManifestRecord(
                    utt_id=utt_id,
                    wav_path=wav_path,
                    intelligibility=_parse_label(row["intelligibility"], "intelligibility", utt_id),
                    wer=_parse_label(row["wer"], "wer", utt_id),
                    stoi=_parse_label(row["stoi"], "stoi", utt_id),
                    split=split,
                )
            )
    if not records:
        raise ManifestError(f"{path}: manifest has no records")
    return records


def save_manifest(records: list[ManifestRecord], path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            try:
                wav = r.wav_path.relative_to(path.parent.resolve()).as_posix()
            except ValueError:
                wav = str(r.wav_path)
            writer.writerow(
                [
                    r.utt_id,
                    wav,
                    "" if r.intelligibility is None else repr(r.intelligibility),
                    "" if r.wer is None else repr(r.wer),
                    "" if r.stoi is None else repr(r.stoi),
                    r.split,
                ]
            )


def split_train_val(
    records: list[ManifestRecord], fraction: float, seed: int
) -> tuple[list[ManifestRecord], list[ManifestRecord]]:
    """Deterministic train/validation partition of the given records."""
    if not 0.0 < fraction < 1.0:
        raise ManifestError(f"validation fraction must be in (0, 1), got {fraction}")
    n = len(records)
    n_val = int(round(n * fraction))
    if n_val == 0 or n_val == n:
        raise ManifestError(f"degenerate split: {n} records at fraction {fraction} gives {n_val} validation items")
    order = np.random.default_rng(seed).permutation(n)
    val_idx = set(int(i) for i in order[:n_val])
    train = [records[i] for i in range(n) if i not in val_idx]
    val = [records[i] for i in range(n) if i in val_idx]
    return train, val


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def _speech_surrogate(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    """Harmonic complex with 4 Hz amplitude modulation, unit RMS."""
    t = np.arange(n) / sr
    f0 = rng.uniform(120.0, 260.0)
    x = np.zeros(n)
    for h in range(1, 13):
        if h * f0 >= 0.475 * sr:
            break
        amp = rng.uniform(0.5, 1.0) / h
        x += amp * np.sin(2.0 * np.pi * h * f0 * t + rng.uniform(0.0, 2.0 * np.pi))
    depth = 0.8
    x *= (1.0 + depth * np.sin(2.0 * np.pi * 4.0 * t + rng.uniform(0.0, 2.0 * np.pi))) / (1.0 + depth)
    return x / np.sqrt(np.mean(x * x))


def _noise(rng: np.random.Generator, kind: str, n: int, sr: int) -> np.ndarray:
    """Unit-RMS noise of the requested kind."""
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        white = rng.standard_normal(n)
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, d=1.0 / sr)
        scale = np.ones_like(f)
        scale[1:] = 1.0 / np.sqrt(f[1:])
        x = np.fft.irfft(spec * scale, n=n)
    elif kind == "babble-surrogate":
        t = np.arange(n) / sr
        x = np.zeros(n)
        for _ in range(6):
            f0 = rng.uniform(100.0, 300.0)
            for h in range(1, 9):
                if h * f0 >= 0.475 * sr:
                    break
                x += (rng.uniform(0.3, 1.0) / h) * np.sin(2.0 * np.pi * h * f0 * t + rng.uniform(0.0, 2.0 * np.pi))
    else:
        raise ManifestError(f"unknown noise kind '{kind}'")
    return x / np.sqrt(np.mean(x * x))


def gen_synthetic(cfg: SynthConfig, out_dir, progress=None) -> tuple[list[ManifestRecord], Path]:
    """Generate a synthetic labelled corpus under ``out_dir``.

    Writes ``wav/<utt_id>.wav`` files, ``manifest.csv``, and
    ``synth_meta.json`` (seed, label functions, per-utterance SNR/noise).
    Deterministic for a fixed config: the same seed yields byte-identical
    wavs and manifest.

    Returns the records and the manifest path.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(cfg.seed)
    children = root.spawn(cfg.n_utts + 1)
    draw = np.random.default_rng(children[0])

    lo, hi = cfg.snr_db_range
    snrs = draw.uniform(lo, hi, size=cfg.n_utts)
    kinds = [cfg.noise_kinds[int(k)] for k in draw.integers(0, len(cfg.noise_kinds), size=cfg.n_utts)]
    n_test = int(round(cfg.n_utts * cfg.test_fraction))
    test_idx = set(int(i) for i in draw.permutation(cfg.n_utts)[:n_test])

    n_samples = int(round(cfg.duration_s * cfg.sample_rate))
    records: list[ManifestRecord] = []
    meta_snr: dict[str, float] = {}
    meta_kind: dict[str, str] = {}

    for i in range(cfg.n_utts):
        utt_id = f"synth_{i:06d}"
        rng = np.random.default_rng(children[i + 1])
        speech = _speech_surrogate(rng, n_samples, cfg.sample_rate)
        noise = _noise(rng, kinds[i], n_samples, cfg.sample_rate)
        snr = float(snrs[i])
        mix = speech + noise * math.sqrt(10.0 ** (-snr / 10.0))
        mix *= 0.9 / np.max(np.abs(mix))

        wav_path = wav_dir / f"{utt_id}.wav"
        save_wav_pcm16(wav_path, mix, cfg.sample_rate)

        labels = {name: eval_label_function(spec, snr) for name, spec in LABEL_FUNCTIONS.items()}
        if cfg.label_noise_std > 0.0:
            for name in labels:
                labels[name] = float(np.clip(labels[name] + rng.normal(0.0, cfg.label_noise_std), 0.0, 1.0))

        records.append(
            ManifestRecord(
                utt_id=utt_id,
                wav_path=wav_path.resolve(),
                intelligibility=labels["intelligibility"],
                wer=labels["wer"],
                stoi=labels["stoi"],
                split="test" if i in test_idx else "train",
            )
        )
        meta_snr[utt_id] = snr
        meta_kind[utt_id] = kinds[i]
        if progress is not None and (i + 1) % 100 == 0:
            progress(i + 1, cfg.n_utts)

    manifest_path = out_dir / "manifest.csv"
    save_manifest(records, manifest_path)
    meta = {
        "seed": cfg.seed,
        "sample_rate": cfg.sample_rate,
        "duration_s": cfg.duration_s,
        "label_noise_std": cfg.label_noise_std,
        "label_functions": LABEL_FUNCTIONS,
        "snr_db": meta_snr,
        "noise_kind": meta_kind,
    }
    with open(out_dir / "synth_meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return records, manifest_path
