import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import insertion_sort
from resilient_options.features import (FEATURE_NAMES, FeatureError, ReturnWindow, build_feature_vector,
                                        centered_log_returns, centered_log_returns_2d, historical_vol,
                                        historical_vol_2d, order_statistics)
from resilient_options.ingest import CleanOptionQuote

FIXTURE_PRICES = [100.0, 101.0, 99.5, 100.2, 102.3, 101.1, 100.9, 103.4, 104.0, 102.2,
                  101.7, 103.9, 105.2, 104.4, 106.0, 105.1, 104.8, 106.6, 107.3, 106.9]


def hand_centered(prices):
    n = len(prices) - 1
    drift = math.log(prices[-1] / prices[0]) / n
    return [math.log(prices[i] / prices[i - 1]) - drift for i in range(1, n + 1)]


def test_constant_and_geometric_paths_are_zero():
    assert np.all(centered_log_returns([100.0] * 20) == 0)
    geo = [100 * 1.01 ** k for k in range(20)]
    assert np.max(np.abs(centered_log_returns(geo))) < 1e-15


def test_fixture_matches_hand_computation():
    R = centered_log_returns(FIXTURE_PRICES)
    assert np.allclose(R, hand_centered(FIXTURE_PRICES), rtol=0, atol=1e-15)
    assert abs(R.sum()) < 1e-12
    # first entry by hand: log(101/100) - log(106.9/100)/19
    assert R[0] == pytest.approx(0.0099503309 - 0.0035117701, abs=1e-9)


def test_window_validation():
    with pytest.raises(FeatureError):
        ReturnWindow((100.0, -1.0, 100.0))
    with pytest.raises(FeatureError):
        centered_log_returns([100.0, 0.0, 101.0])


def test_order_statistics_examples():
    assert order_statistics([3, 1, 2]).tolist() == [1, 2, 3]
    assert order_statistics([1, 2, 3]).tolist() == [1, 2, 3]
    rng = np.random.default_rng(4)
    x = rng.normal(size=19).tolist()
    assert order_statistics(x).tolist() == insertion_sort(x)


def test_historical_vol_examples():
    assert historical_vol(np.zeros(19)).hist_vol == 0.0
    assert historical_vol(np.zeros(19)).degenerate
    c, n = 0.013, 18
    alt = np.array([c, -c] * (n // 2))
    expected = c * math.sqrt(n / (n - 1)) * math.sqrt(255)
    assert historical_vol(alt).hist_vol == pytest.approx(expected, rel=1e-14)
    est = historical_vol(alt)
    assert est.rho == est.hist_vol


def test_feature_vector_fixture():
    q = CleanOptionQuote("N50", dt.date(2019, 5, 2), dt.date(2019, 5, 30), strike=102.0,
                         spot=100.0, option_close=3.1, prev_option_close=50.0, prev_spot=10000.0)
    fv = build_feature_vector(q, ReturnWindow(tuple(FIXTURE_PRICES)), rate=0.065)
    vec = fv.as_array()
    assert len(vec) == len(FEATURE_NAMES) == 23
    oracle = insertion_sort(hand_centered(FIXTURE_PRICES)) + [28, 100 / 102, 0.5, 0.065]
    assert np.allclose(vec, oracle, rtol=0, atol=1e-15)
    assert fv.prev_norm_price == 0.5
    assert fv.inv_moneyness == pytest.approx(0.98039, abs=1e-5)


def test_feature_vector_needs_full_window():
    q = CleanOptionQuote("N50", dt.date(2019, 5, 2), dt.date(2019, 5, 30), 100.0, 100.0, 1.0, 1.0, 100.0)
    with pytest.raises(FeatureError):
        build_feature_vector(q, ReturnWindow(tuple(FIXTURE_PRICES[:10])), 0.05)


paths = st.lists(st.floats(1e-2, 1e6), min_size=20, max_size=20)


@given(paths)
def test_telescoping(prices):
    assert abs(centered_log_returns(prices).sum()) < 1e-12


@given(paths, st.floats(1e-4, 1e4))
def test_scale_invariance(prices, c):
    a = np.sort(centered_log_returns(prices))
    b = np.sort(centered_log_returns([c * p for p in prices]))
    assert np.allclose(a, b, rtol=0, atol=1e-12)
    assert historical_vol(b).hist_vol == pytest.approx(historical_vol(a).hist_vol, rel=1e-10, abs=1e-12)


@given(st.lists(st.floats(-0.2, 0.2), min_size=2, max_size=40))
def test_vol_of_order_stats_equals_vol_of_returns(r):
    # the same multiset, so the sample std agrees up to summation order
    assert historical_vol(order_statistics(r)).hist_vol == pytest.approx(
        historical_vol(r).hist_vol, rel=1e-12, abs=1e-15)


@given(st.lists(st.floats(-0.2, 0.2), min_size=2, max_size=40), st.randoms())
def test_vol_permutation_invariant(r, rnd):
    s = list(r)
    rnd.shuffle(s)
    assert historical_vol(s).hist_vol == pytest.approx(historical_vol(r).hist_vol, rel=1e-12, abs=1e-15)


def test_2d_variants_match_1d():
    rng = np.random.default_rng(9)
    W = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, size=(50, 20)), axis=1))
    R = centered_log_returns_2d(W)
    for row, w in zip(R, W):
        assert np.allclose(row, centered_log_returns(w), rtol=0, atol=1e-15)
    assert np.allclose(historical_vol_2d(np.sort(R, axis=1)),
                       [historical_vol(r).hist_vol for r in R], rtol=1e-13)
