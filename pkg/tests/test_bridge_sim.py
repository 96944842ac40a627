"""Brownian-bridge event series, retrospective draws, layers, interpolation.

Frozen reference probabilities were computed from an independent
discretized-path simulation (2000-step grids, 200k paths, with analytic
corrections for boundary crossings between grid points); the series values
agreed within 1.6 standard errors.  They are kept here to 1e-6 as
regression anchors for the much tighter series evaluation.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfusion.bridge_sim import (
    BridgeSkeleton,
    ComplementBracket,
    LayerSequence,
    PointBracket,
    ProductBracket,
    RatioBracket,
    SeriesBracket,
    bernoulli_from_bracket,
    bessel_noleave_event,
    bessel_upper_brackets,
    bridge_interpolate,
    build_layered_skeleton,
    crossing_event,
    evaluate_bracket,
    interval_noexit_brackets,
    onesided_noexit_prob,
    sample_extremum_and_decompose,
    sample_layer,
)
from conftest import binom_se

INTERVAL_REFERENCE = [
    # (T, x, y, K, probability)
    (1.0, 0.2, -0.3, 1.0, 0.6912199232),
    (2.0, 0.5, 0.8, 1.5, 0.4937162007),
    (0.5, 0.0, 0.0, 0.6, 0.5324420009),
]

BESSEL_REFERENCE = [
    # (T, y, K, probability)
    (1.0, 0.5, 1.5, 0.7684125683),
    (0.7, 0.3, 1.0, 0.4192415074),
]


@pytest.mark.parametrize("T,x,y,K,p", INTERVAL_REFERENCE)
def test_interval_series_frozen_values(T, x, y, K, p):
    v = evaluate_bracket(SeriesBracket(interval_noexit_brackets(T, x, y, K)))
    assert v == pytest.approx(p, abs=1e-9)


@pytest.mark.parametrize("T,y,K,p", BESSEL_REFERENCE)
def test_bessel_series_frozen_values(T, y, K, p):
    v = evaluate_bracket(SeriesBracket(bessel_upper_brackets(T, y, K)))
    assert v == pytest.approx(p, abs=1e-9)


def test_interval_series_is_zero_outside():
    v = evaluate_bracket(SeriesBracket(interval_noexit_brackets(1.0, 1.2, 0.0, 1.0)))
    assert v == 0.0


def test_bessel_series_endpoint_at_cap_is_zero():
    v = evaluate_bracket(SeriesBracket(bessel_upper_brackets(1.0, 1.0, 1.0)))
    assert v == 0.0


@given(
    T=st.floats(0.05, 5.0),
    x=st.floats(-0.9, 0.9),
    y=st.floats(-0.9, 0.9),
    K=st.floats(1.0, 4.0),
)
@settings(max_examples=60, deadline=None)
def test_interval_series_monotone_in_K(T, x, y, K):
    p1 = evaluate_bracket(SeriesBracket(interval_noexit_brackets(T, x, y, K)))
    p2 = evaluate_bracket(SeriesBracket(interval_noexit_brackets(T, x, y, K + 0.5)))
    assert 0.0 <= p1 <= p2 <= 1.0


def test_onesided_probability_closed_form():
    assert onesided_noexit_prob(1.0, 0.5, 0.7) == pytest.approx(
        1.0 - math.exp(-2.0 * 0.5 * 0.7 / 1.0), rel=1e-12
    )
    assert onesided_noexit_prob(1.0, -0.1, 0.7) == 0.0


def test_interval_series_widens_to_onesided_limit():
    # pushing the far boundary away leaves only the near-boundary constraint
    T, x, y = 1.0, 0.4, 0.6
    big = 60.0
    shifted = evaluate_bracket(
        SeriesBracket(
            interval_noexit_brackets(T, x - big / 2, y - big / 2, big / 2)
        )
    )
    assert shifted == pytest.approx(onesided_noexit_prob(T, x, y), abs=1e-12)


def test_bracket_combinators():
    a, b = 0.3, 0.8
    prod = ProductBracket([PointBracket(a), PointBracket(b)])
    assert evaluate_bracket(prod) == pytest.approx(a * b, rel=1e-12)
    comp = ComplementBracket(PointBracket(a))
    assert evaluate_bracket(comp) == pytest.approx(1.0 - a, rel=1e-12)
    ratio = RatioBracket(PointBracket(a), PointBracket(b))
    assert evaluate_bracket(ratio) == pytest.approx(a / b, rel=1e-12)


def test_bernoulli_from_bracket_frequency(rng):
    p = 0.6912199232
    n = 40_000
    hits = sum(
        bernoulli_from_bracket(
            SeriesBracket(interval_noexit_brackets(1.0, 0.2, -0.3, 1.0)), rng
        )
        for _ in range(n)
    )
    freq = hits / n
    assert abs(freq - p) < 4.0 * binom_se(p, n)


def test_crossing_event_matches_series(rng):
    T, x, y, K = 0.5, 0.0, 0.0, 0.6
    p = 0.5324420009
    n = 40_000
    freq = np.mean([crossing_event(T, x, y, K, rng) for _ in range(n)])
    assert abs(freq - p) < 4.0 * binom_se(p, n)
    with pytest.raises(ValueError):
        crossing_event(1.0, 0.7, 0.0, 0.6, rng)


def test_sample_layer_frequencies_match_series(rng):
    T, x, y = 1.0, 0.2, -0.3
    layers = LayerSequence(width=0.5)
    n = 30_000
    counts = np.bincount(
        [sample_layer(T, x, y, layers, rng) for _ in range(n)], minlength=5
    )
    half_gap = 0.5 * abs(x - y)
    xs = 0.5 * (x - y)

    def cum(i):
        return evaluate_bracket(
            SeriesBracket(interval_noexit_brackets(T, xs, -xs, half_gap + layers[i]))
        )

    prev = 0.0
    for i in range(1, 4):
        cur = cum(i)
        p_i = cur - prev
        freq = counts[i] / n
        assert abs(freq - p_i) < 4.0 * binom_se(p_i, n)
        prev = cur


def test_bridge_interpolate_plain_law(rng):
    # unconstrained skeleton: the midpoint is Gaussian around the chord
    T, x, y = 2.0, 1.0, -1.0
    n = 40_000
    vals = np.empty(n)
    for i in range(n):
        s = BridgeSkeleton(T, x, y)
        vals[i] = bridge_interpolate(s, 1.0, rng)
    assert vals.mean() == pytest.approx(0.0, abs=4.0 * math.sqrt(0.5 / n))
    assert vals.var() == pytest.approx(0.5, rel=0.03)


def test_bridge_interpolate_consistency_of_revealed_points(rng):
    s = BridgeSkeleton(1.0, 0.0, 0.0)
    v1 = bridge_interpolate(s, 0.5, rng)
    v2 = bridge_interpolate(s, 0.25, rng)
    assert [t for t, _ in s.revealed] == [0.25, 0.5]
    with pytest.raises(ValueError):
        bridge_interpolate(s, 0.5, rng)
    with pytest.raises(ValueError):
        bridge_interpolate(s, 1.5, rng)


def test_layer_sequence_indexing():
    ls = LayerSequence(width=0.5)
    assert ls[0] == 0.0
    assert ls[3] == 1.5
    pref = LayerSequence(width=1.0, prefix=[0.0, 0.2, 0.7])
    assert pref[1] == 0.2
    assert pref[4] == 0.7 + 2.0
    with pytest.raises(ValueError):
        LayerSequence(width=-1.0)
    with pytest.raises(ValueError):
        LayerSequence(prefix=[0.1, 0.2])


def test_layered_skeleton_respects_value_box(rng):
    T, x, y = 1.0, 0.3, -0.2
    layers = LayerSequence.for_horizon(T, c=0.5)
    for _ in range(300):
        s = build_layered_skeleton(T, x, y, layers, rng)
        lo, hi = s.value_box()
        assert lo <= min(x, y) and hi >= max(x, y)
        t_ext, v_ext, kind = s.extremum
        assert 0.0 < t_ext < T
        assert lo - 1e-9 <= v_ext <= hi + 1e-9
        for t in rng.uniform(0.0, T, size=5):
            if any(abs(t - tr) < 1e-9 for tr, _ in s.revealed) or not 0 < t < T:
                continue
            v = bridge_interpolate(s, float(t), rng)
            assert lo - 1e-9 <= v <= hi + 1e-9
            if kind == "max":
                assert v <= v_ext + 1e-9
            else:
                assert v >= v_ext - 1e-9


def test_layered_midpoint_marginal_matches_plain_conditioning(rng):
    # mixing over layers must reproduce the unconditioned bridge marginal
    from scipy import stats

    T, x, y = 1.0, 0.0, 0.0
    layers = LayerSequence.for_horizon(T)
    n = 4000
    vals = np.empty(n)
    for i in range(n):
        s = build_layered_skeleton(T, x, y, layers, rng)
        vals[i] = bridge_interpolate(s, 0.5, rng)
    p = stats.kstest(vals, "norm", args=(0.0, math.sqrt(0.25))).pvalue
    assert p > 0.01


def test_extremum_decomposition_rejects_revealed_skeleton(rng):
    s = BridgeSkeleton(1.0, 0.0, 0.0)
    bridge_interpolate(s, 0.5, rng)
    with pytest.raises(ValueError):
        sample_extremum_and_decompose(s, 1, LayerSequence(1.0), rng)


def test_bessel_noleave_event_endpoint_zero(rng):
    T, y, K, p = 1.0, 0.5, 1.5, 0.7684125683
    n = 30_000
    freq = np.mean([bessel_noleave_event(T, 0.0, y, K, rng) for _ in range(n)])
    assert abs(freq - p) < 4.0 * binom_se(p, n)


def test_bessel_noleave_event_interior_matches_ratio(rng):
    # interior endpoints: stay-in-(0,K) over stay-positive under the bridge law
    T, x, y, K = 1.0, 0.4, 0.6, 1.2
    half = 0.5 * K
    inner = evaluate_bracket(
        SeriesBracket(interval_noexit_brackets(T, x - half, y - half, half))
    )
    p = inner / onesided_noexit_prob(T, x, y)
    n = 30_000
    freq = np.mean([bessel_noleave_event(T, x, y, K, rng) for _ in range(n)])
    assert abs(freq - p) < 4.0 * binom_se(p, n)
    with pytest.raises(ValueError):
        bessel_noleave_event(1.0, 0.4, 1.3, 1.2, rng)
    with pytest.raises(ValueError):
        bessel_noleave_event(1.0, 0.4, 0.6, 1.2, rng, L=1.0)
