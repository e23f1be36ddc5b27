"""Minimal reader for the toolkit's manifest CSV (the shared file schema)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

COLUMNS = ("utt_id", "wav_path", "intelligibility", "wer", "stoi", "split")


class ManifestError(Exception):
    pass


@dataclass
class Utterance:
    utt_id: str
    wav_path: Path
    intelligibility: float | None
    wer: float | None
    stoi: float | None
    split: str

    def label(self, target: str) -> float | None:
        return {"I": self.intelligibility, "W": self.wer, "S": self.stoi}[target]


def load_manifest(path) -> list[Utterance]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    out: list[Utterance] = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != COLUMNS:
            raise ManifestError(f"{path}: expected header {','.join(COLUMNS)}")
        for row in reader:
            wav = Path(row["wav_path"])
            if not wav.is_absolute():
                wav = (path.parent / wav).resolve()
            out.append(
                Utterance(
                    utt_id=row["utt_id"],
                    wav_path=wav,
                    intelligibility=float(row["intelligibility"]) if row["intelligibility"] else None,
                    wer=float(row["wer"]) if row["wer"] else None,
                    stoi=float(row["stoi"]) if row["stoi"] else None,
                    split=row["split"],
                )
            )
    if not out:
        raise ManifestError(f"{path}: no records")
    return out
