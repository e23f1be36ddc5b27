"""Evaluation metrics: MSE, Pearson LCC, Spearman SRCC, and token error rate.

All functions are pure. Correlations raise ``MetricError`` when undefined
(constant inputs) rather than returning NaN, so callers never silently
aggregate garbage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError


@dataclass(frozen=True)
class ScorePair:
    """One (ground truth, prediction) pair for a single utterance."""

    truth: float
    predicted: float
    utt_id: str = ""


def _as_vectors(truth, predicted) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if t.ndim != 1 or p.ndim != 1:
        raise MetricError("metric inputs must be 1-D sequences")
    if t.shape != p.shape:
        raise MetricError(f"length mismatch: {t.shape[0]} truths vs {p.shape[0]} predictions")
    if not (np.isfinite(t).all() and np.isfinite(p).all()):
        raise MetricError("metric inputs must be finite")
    return t, p


def mse(truth, predicted) -> float:
    """Mean squared error between truth and prediction vectors."""
    t, p = _as_vectors(truth, predicted)
    if t.size == 0:
        raise MetricError("mse of empty input is undefined")
    d = t - p
    return float(np.mean(d * d))


def lcc(truth, predicted) -> float:
    """Pearson linear correlation coefficient.

    Requires at least two pairs and non-constant values on both sides.
    """
    t, p = _as_vectors(truth, predicted)
    if t.size < 2:
        raise MetricError("lcc needs at least two pairs")
    dt = t - t.mean()
    dp = p - p.mean()
    st = float(np.sqrt(np.sum(dt * dt)))
    sp = float(np.sqrt(np.sum(dp * dp)))
    if st == 0.0 or sp == 0.0:
        raise MetricError("undefined correlation: one side is constant")
    return float(np.sum(dt * dp) / (st * sp))


def rank_with_ties(values) -> np.ndarray:
    """1-based ranks; tied values receive the mean of their rank span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        # positions i..j (0-based) share the average of ranks i+1..j+1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(truth, predicted) -> float:
    """Spearman rank correlation: Pearson over average-tied ranks."""
    t, p = _as_vectors(truth, predicted)
    if t.size < 2:
        raise MetricError("srcc needs at least two pairs")
    rt = rank_with_ties(t)
    rp = rank_with_ties(p)
    if np.all(rt == rt[0]) or np.all(rp == rp[0]):
        raise MetricError("undefined rank correlation: one side is constant")
    return lcc(rt, rp)


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    a = list(a)
    b = list(b)
    if len(a) < len(b):  # keep the DP row short
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,  # deletion
                cur[j - 1] + 1,  # insertion
                prev[j - 1] + (0 if x == y else 1),  # substitution / match
            )
        prev = cur
    return prev[len(b)]


def wer(ref, hyp) -> float:
    """Edit distance normalized by reference length, clamped to [0, 1].

    ``ref`` and ``hyp`` are token sequences (words or characters). The raw
    distance can exceed ``len(ref)`` when the hypothesis inserts tokens;
    the clamp keeps the score inside the label range used everywhere else.
    """
    ref = list(ref)
    hyp = list(hyp)
    if len(ref) == 0:
        raise MetricError("wer needs a non-empty reference")
    return min(1.0, edit_distance(ref, hyp) / len(ref))


def tokenize(text: str, mode: str = "char") -> list[str]:
    """Split a transcript into tokens.

    ``char`` drops whitespace and yields one token per character (the right
    unit for Mandarin transcripts); ``word`` splits on whitespace.
    """
    if mode == "char":
        return [c for c in text if not c.isspace()]
    if mode == "word":
        return text.split()
    raise MetricError(f"unknown tokenization mode '{mode}'")


def pairs_to_vectors(pairs: list[ScorePair]) -> tuple[np.ndarray, np.ndarray]:
    t = np.array([p.truth for p in pairs], dtype=np.float64)
    h = np.array([p.predicted for p in pairs], dtype=np.float64)
    return t, h


def evaluate_pairs(pairs: list[ScorePair]) -> dict:
    """LCC/SRCC/MSE summary for one target, as used in evaluation reports."""
    t, p = pairs_to_vectors(pairs)
    return {
        "lcc": lcc(t, p),
        "srcc": srcc(t, p),
        "mse": mse(t, p),
        "n": int(t.size),
    }
