"""Metric tests against independent definition-level oracles."""

import math
from math import fsum

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mti.errors import MetricError
from mti.metrics import edit_distance, lcc, mse, rank_with_ties, srcc, tokenize, wer


# ---------------------------------------------------------------------------
# oracles: written from the definitions, sharing no code with the library
# ---------------------------------------------------------------------------

def mse_oracle(t, p):
    return fsum((a - b) ** 2 for a, b in zip(t, p)) / len(t)


def pearson_oracle(x, y):
    n = len(x)
    mx = fsum(x) / n
    my = fsum(y) / n
    cov = fsum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = fsum((a - mx) ** 2 for a in x)
    vy = fsum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def ranks_oracle(v):
    # average rank via counting: rank(x) = #smaller + (#equal + 1)/2
    out = []
    for x in v:
        smaller = sum(1 for y in v if y < x)
        equal = sum(1 for y in v if y == x)
        out.append(smaller + (equal + 1) / 2.0)
    return out


def srcc_oracle(t, p):
    return pearson_oracle(ranks_oracle(t), ranks_oracle(p))


def script_cost_oracle(a, b):
    # exhaustive recursion over all edit scripts, no memoization
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        script_cost_oracle(a[1:], b[1:]) + (0 if a[0] == b[0] else 1),
        script_cost_oracle(a[1:], b) + 1,
        script_cost_oracle(a, b[1:]) + 1,
    )


# ---------------------------------------------------------------------------
# mse
# ---------------------------------------------------------------------------

def test_mse_identical_is_zero():
    assert mse([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == 0.0


def test_mse_symmetric_unit_errors():
    assert mse([0.0, 1.0], [1.0, 0.0]) == 1.0


def test_mse_matches_scalar_loop_oracle():
    rng = np.random.default_rng(7)
    t = rng.uniform(0, 1, size=7)
    p = rng.uniform(0, 1, size=7)
    assert abs(mse(t, p) - mse_oracle(t, p)) < 1e-12


def test_mse_empty_errors():
    with pytest.raises(MetricError):
        mse([], [])


# ---------------------------------------------------------------------------
# lcc
# ---------------------------------------------------------------------------

def test_lcc_positive_affine_is_one():
    t = np.array([0.1, 0.4, 0.2, 0.9])
    assert lcc(t, 2.0 * t + 1.0) == pytest.approx(1.0, abs=1e-12)


def test_lcc_negation_is_minus_one():
    t = np.array([0.1, 0.4, 0.2, 0.9])
    assert lcc(t, -t) == pytest.approx(-1.0, abs=1e-12)


def test_lcc_matches_covariance_oracle():
    rng = np.random.default_rng(11)
    t = rng.normal(size=10)
    p = rng.normal(size=10)
    assert abs(lcc(t, p) - pearson_oracle(t, p)) < 1e-10


def test_lcc_constant_side_errors():
    with pytest.raises(MetricError, match="undefined correlation"):
        lcc([1.0, 1.0, 1.0], [0.1, 0.2, 0.3])


@given(
    st.lists(st.floats(-100, 100), min_size=2, max_size=30).filter(lambda v: max(v) - min(v) > 1e-6),
    st.floats(0.01, 50),
    st.floats(-10, 10),
)
def test_lcc_affine_invariance(values, scale, shift):
    other = list(np.linspace(0.0, 1.0, len(values)))
    base = lcc(values, other)
    scaled = lcc([scale * v + shift for v in values], other)
    assert abs(base - scaled) < 1e-12


# ---------------------------------------------------------------------------
# srcc
# ---------------------------------------------------------------------------

def test_srcc_reversed_order():
    assert srcc([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0, abs=1e-12)


def test_srcc_monotone_transform_is_one():
    t = np.array([0.3, 0.1, 0.9, 0.45])
    assert srcc(t, np.exp(3.0 * t)) == pytest.approx(1.0, abs=1e-12)


def test_srcc_ties_case_matches_oracle():
    t = [1.0, 2.0, 2.0, 3.0]
    p = [1.0, 3.0, 2.0, 4.0]
    expected = srcc_oracle(t, p)
    # frozen from the counting-rank + Pearson oracle: sqrt(0.9)
    assert expected == pytest.approx(0.9486832980505138, abs=1e-12)
    assert srcc(t, p) == pytest.approx(expected, abs=1e-12)


def test_srcc_all_equal_side_errors():
    with pytest.raises(MetricError):
        srcc([0.5, 0.5, 0.5], [0.1, 0.2, 0.3])


def test_rank_with_ties_matches_counting_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        v = rng.integers(0, 5, size=rng.integers(2, 12)).astype(float)
        assert np.allclose(rank_with_ties(v), ranks_oracle(v))


def test_srcc_all_permutations_n6_match_oracle():
    import itertools

    base = [0.1, 0.2, 0.4, 0.5, 0.7, 0.9]
    for perm in itertools.permutations(range(6)):
        p = [base[i] for i in perm]
        assert srcc(base, p) == pytest.approx(srcc_oracle(base, p), abs=1e-12)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=25).filter(lambda v: max(v) - min(v) > 1e-6))
def test_srcc_strictly_increasing_map_is_one(values):
    # random strictly increasing piecewise map: cumulative positive steps
    rng = np.random.default_rng(len(values))
    order = np.argsort(np.asarray(values), kind="stable")
    ranks = rank_with_ties(values)
    steps = np.cumsum(rng.uniform(0.1, 2.0, size=len(values)))
    mapped = [steps[int(round(r)) - 1] if float(r).is_integer() else np.interp(r, np.arange(1, len(values) + 1), steps) for r in ranks]
    assert srcc(values, mapped) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# wer / edit distance
# ---------------------------------------------------------------------------

def test_wer_identical_is_zero():
    assert wer(["a", "b", "c"], ["a", "b", "c"]) == 0.0


def test_wer_single_deletion():
    # oracle: one deletion out of four reference tokens
    assert script_cost_oracle(("A", "B", "C", "D"), ("A", "C", "D")) == 1
    assert wer(["A", "B", "C", "D"], ["A", "C", "D"]) == 0.25


def test_wer_clamped_to_one():
    # oracle: distance 3 (one substitution, two insertions), ref length 1
    assert script_cost_oracle(("A",), ("B", "C", "D")) == 3
    assert wer(["A"], ["B", "C", "D"]) == 1.0


def test_wer_empty_reference_errors():
    with pytest.raises(MetricError):
        wer([], ["a"])


def test_edit_distance_symmetry():
    rng = np.random.default_rng(5)
    alphabet = ["a", "b", "c"]
    for _ in range(100):
        a = [alphabet[i] for i in rng.integers(0, 3, size=rng.integers(0, 6))]
        b = [alphabet[i] for i in rng.integers(0, 3, size=rng.integers(0, 6))]
        assert edit_distance(a, b) == edit_distance(b, a)


def test_edit_distance_matches_enumeration_small():
    import itertools

    alphabet = "abc"
    seqs = [tuple(s) for n in range(0, 4) for s in itertools.product(alphabet, repeat=n)]
    rng = np.random.default_rng(9)
    idx = rng.integers(0, len(seqs), size=(60, 2))
    for i, j in idx:
        a, b = seqs[i], seqs[j]
        assert edit_distance(a, b) == script_cost_oracle(a, b)


@given(
    st.lists(st.sampled_from("abc"), min_size=1, max_size=8),
    st.lists(st.sampled_from("abc"), min_size=0, max_size=8),
)
@settings(max_examples=60)
def test_wer_triangle_sanity(ref, hyp):
    assert wer(ref, ref) == 0.0
    assert 0.0 <= wer(ref, hyp) <= 1.0


# ---------------------------------------------------------------------------
# tokenize
# ---------------------------------------------------------------------------

def test_tokenize_char_drops_whitespace():
    assert tokenize("ab c", mode="char") == ["a", "b", "c"]


def test_tokenize_word():
    assert tokenize("the quick  fox", mode="word") == ["the", "quick", "fox"]


def test_tokenize_unknown_mode_errors():
    with pytest.raises(MetricError):
        tokenize("x", mode="phoneme")
