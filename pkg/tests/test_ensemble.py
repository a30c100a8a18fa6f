import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_force_grid
from resilient_options.ensemble import (EnsembleParams, blend, calibrate, dsq, lambda_axis,
                                        sigma0_of_training_set, weight_ratio)

prices = st.floats(0.0, 50.0)
lams = st.floats(0.0, 5.0)


def test_dsq_examples():
    assert dsq(0.2, 0.2) == 0.0
    assert dsq(0.4, 0.2) == 1.0
    assert dsq(0.0, 0.2) == 1.0
    with pytest.raises(ValueError):
        dsq(0.1, 0.0)


def test_blend_examples():
    assert blend(1.3, 2.9, 0.7, EnsembleParams(0.0, 1.0, 0.1)) == 1.3
    for q in (0.0, 0.3, 2.0):
        assert blend(1.0, 2.0, q, EnsembleParams(2.6, 0.0, 0.1)) == pytest.approx(1 / 3.6 + 2 * 2.6 / 3.6,
                                                                                  rel=1e-15)
    assert blend(1.0, 2.0, 0.0, EnsembleParams(3.0, 0.5, 0.1)) == 1.0


def test_zero_to_zero_is_one():
    assert weight_ratio(0.0, 1.7, 0.0) == 1.7


def test_params_validation_and_sidecar(tmp_path):
    with pytest.raises(ValueError):
        EnsembleParams(-1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        EnsembleParams(1.0, 0.0, 0.0)
    p = EnsembleParams(2.6, 0.0, 0.1234)
    p.save(tmp_path / "e.json")
    assert EnsembleParams.load(tmp_path / "e.json") == p


def test_lambda_axis():
    ax = lambda_axis()
    assert len(ax) == 51 and ax[0] == 0.0 and ax[-1] == 5.0 and ax[10] == 1.0


def test_calibrate_perfect_ds_model():
    rng = np.random.default_rng(0)
    y = rng.uniform(0.5, 3.0, 200)
    g = calibrate(y + rng.normal(0, 0.3, 200), y, np.ones(200), y)
    assert g.argmin == (5.0, 0.0)


def test_calibrate_identical_models():
    y = np.linspace(1, 2, 50)
    g = calibrate(y + 0.1, y + 0.1, np.full(50, 0.4), y)
    assert g.argmin == (0.0, 0.0)
    assert np.ptp(g.surface) == 0


def test_calibrate_recovers_unit_weight():
    # the truth sits exactly halfway: optimal w = 1 at dsq = 1, so every
    # (1.0, lambda2) ties and the lowest lambda2 wins
    rng = np.random.default_rng(1)
    hh = rng.uniform(0.5, 3.0, 300)
    ds = hh + rng.choice([-1, 1], 300) * rng.uniform(0.2, 1.0, 300)
    y = 0.5 * (hh + ds)
    g = calibrate(hh, ds, np.ones(300), y)
    assert g.argmin == (1.0, 0.0)
    l1, l2 = g.argmin
    assert l1 * 1.0 ** l2 == 1.0
    assert np.all(g.surface[10] == g.surface[10, 0])


def test_calibrate_matches_brute_force_scan():
    rng = np.random.default_rng(2)
    n = 120
    y = rng.uniform(1, 3, n)
    hh = y + rng.normal(0.2, 0.3, n)
    ds = y + rng.normal(-0.1, 0.5, n)
    q = rng.uniform(0, 2, n)
    ax = lambda_axis()

    def objective(a, b):
        p = blend(hh, ds, q, EnsembleParams(a, b, 0.1))
        return float(np.sqrt(np.mean((y - p) ** 2)))

    arg, best = brute_force_grid(objective, ax, ax)
    g = calibrate(hh, ds, q, y)
    assert g.argmin == arg and g.rmse_min == pytest.approx(best, rel=1e-12)
    assert g.surface.shape == (51, 51) and len(list(g.rows())) == 51 * 51


def test_calibrate_errors():
    with pytest.raises(ValueError):
        calibrate([], [], [], [])
    with pytest.raises(ValueError):
        calibrate([1.0], [1.0, 2.0], [0.1], [1.0])


def test_sigma0_examples():
    assert sigma0_of_training_set([0.2] * 5) == 0.2
    assert sigma0_of_training_set([0.1, 0.2]) == pytest.approx(0.15)
    with pytest.raises(ValueError):
        sigma0_of_training_set([])


@given(prices, prices, st.floats(0.0, 10.0), lams, lams)
def test_blend_convex(a, b, q, l1, l2):
    out = blend(a, b, q, EnsembleParams(l1, l2, 0.1))
    assert min(a, b) <= out <= max(a, b)


@given(prices, prices, st.floats(0.0, 10.0), lams)
def test_zero_lambda1_is_pure_hh(a, b, q, l2):
    assert blend(a, b, q, EnsembleParams(0.0, l2, 0.1)) == a


@given(prices, prices, st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_zero_shift_is_pure_hh(a, b, l1, l2):
    assert blend(a, b, 0.0, EnsembleParams(l1, l2, 0.1)) == a


@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), lams, lams)
def test_weight_nondecreasing_in_dsq(q1, q2, l1, l2):
    lo, hi = sorted((q1, q2))
    assert weight_ratio(lo, l1, l2) <= weight_ratio(hi, l1, l2)


@given(st.floats(0.0, 4.0), st.floats(0.01, 4.0), st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_blend_moves_toward_ds_with_shift(q, dq, l1, l2):
    a, b = 1.0, 3.0
    p = EnsembleParams(l1, l2, 0.1)
    assert blend(a, b, q + dq, p) >= blend(a, b, q, p)


@given(st.integers(-3, 3), st.integers(0, 10_000))
def test_argmin_invariant_under_joint_scaling(k, seed):
    rng = np.random.default_rng(seed)
    n = 60
    y = rng.uniform(1, 3, n)
    hh, ds = y + rng.normal(0, 0.3, n), y + rng.normal(0, 0.3, n)
    q = rng.uniform(0, 1.5, n)
    c = 2.0 ** k  # exact rescaling keeps float ties intact
    a = calibrate(hh, ds, q, y)
    b = calibrate(c * hh, c * ds, q, c * y)
    assert a.argmin == b.argmin
