"""Evaluation artifacts: per-utterance CSV, metric report JSON, scatter SVG."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

from .errors import MtiError
from .metrics import ScorePair, evaluate_pairs

log = logging.getLogger(__name__)

PAIRS_COLUMNS = ("utt_id", "target", "truth", "predicted")


def write_pairs_csv(pairs_by_target: dict[str, list[ScorePair]], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(PAIRS_COLUMNS)
        for target in sorted(pairs_by_target):
            for p in pairs_by_target[target]:
                writer.writerow([p.utt_id, target, repr(p.truth), repr(p.predicted)])


def read_pairs_csv(path) -> dict[str, list[ScorePair]]:
    path = Path(path)
    if not path.is_file():
        raise MtiError(f"pairs CSV not found: {path}")
    out: dict[str, list[ScorePair]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != PAIRS_COLUMNS:
            raise MtiError(f"{path}: expected header {','.join(PAIRS_COLUMNS)}")
        for row in reader:
            try:
                pair = ScorePair(truth=float(row["truth"]), predicted=float(row["predicted"]), utt_id=row["utt_id"])
            except ValueError:
                raise MtiError(f"{path}: malformed row {row}")
            out.setdefault(row["target"], []).append(pair)
    if not out:
        raise MtiError(f"{path}: no score pairs")
    return out


def write_report_json(pairs_by_target: dict[str, list[ScorePair]], path) -> dict:
    report = {t: evaluate_pairs(ps) for t, ps in sorted(pairs_by_target.items())}
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report


def format_metric_table(report: dict) -> str:
    lines = [f"{'target':<8}{'LCC':>8}{'SRCC':>8}{'MSE':>10}{'n':>6}"]
    for target in sorted(report):
        r = report[target]
        lines.append(f"{target:<8}{r['lcc']:>8.3f}{r['srcc']:>8.3f}{r['mse']:>10.4f}{r['n']:>6d}")
    return "\n".join(lines)


def scatter_svg(pairs: list[ScorePair], target: str, path, size: int = 500, margin: int = 50) -> None:
    """Truth-vs-prediction scatter with the unit diagonal, axes fixed to [0, 1].

    Predictions outside [0, 1] are drawn clamped with a 'clipped' marker class
    and logged as warnings.
    """
    span = size - 2 * margin

    def to_px(truth, pred):
        return margin + truth * span, size - margin - pred * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect class="frame" x="{margin}" y="{margin}" width="{span}" height="{span}" fill="white" stroke="black"/>',
    ]
    x0, y0 = to_px(0.0, 0.0)
    x1, y1 = to_px(1.0, 1.0)
    parts.append(
        f'<line class="diagonal" x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" stroke="gray" stroke-dasharray="4 3"/>'
    )
    for p in pairs:
        clipped = not (0.0 <= p.predicted <= 1.0) or not (0.0 <= p.truth <= 1.0)
        if clipped:
            log.warning("%s: point (%.4g, %.4g) outside [0,1], drawing clamped", p.utt_id, p.truth, p.predicted)
        t = min(1.0, max(0.0, p.truth))
        q = min(1.0, max(0.0, p.predicted))
        cx, cy = to_px(t, q)
        cls = "point clipped" if clipped else "point"
        fill = "red" if clipped else "steelblue"
        parts.append(f'<circle class="{cls}" cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="{fill}" fill-opacity="0.7"/>')
    for frac in (0.0, 0.5, 1.0):
        x, y = to_px(frac, 0.0)
        parts.append(f'<text x="{x:.0f}" y="{size - margin + 18}" font-size="11" text-anchor="middle">{frac:g}</text>')
        x, y = to_px(0.0, frac)
        parts.append(f'<text x="{margin - 8}" y="{y + 4:.0f}" font-size="11" text-anchor="end">{frac:g}</text>')
    parts.append(
        f'<text x="{size / 2:.0f}" y="{margin - 14}" font-size="13" text-anchor="middle">target {target}: prediction vs truth</text>'
    )
    parts.append(f'<text x="{size / 2:.0f}" y="{size - 12}" font-size="12" text-anchor="middle">ground truth</text>')
    parts.append(f'<text x="14" y="{size / 2:.0f}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {size / 2:.0f})">prediction</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
