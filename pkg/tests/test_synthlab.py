import dataclasses
import math

import numpy as np
import pandas as pd
import pytest

from resilient_options import synthlab
from resilient_options.ensemble import EnsembleParams
from resilient_options.features import DELTA
from resilient_options.ingest import FilterConfig, clean_and_filter
from resilient_options.pricing import bsm_call
from conftest import SMALL_GBT
from resilient_options.pipeline import train_bundle
from resilient_options.synthlab import (ROLE_TEST, SynthScenario, experiment_2_flags,
                                        label_options, run_experiment_1, run_experiment_2,
                                        simulate_gbm)


# -- paths -----------------------------------------------------------------

def test_zero_vol_path_is_deterministic_growth():
    scn = SynthScenario(sigma=0.0, mu=0.1, path_days=300, s0=50.0)
    k = np.arange(300)
    assert np.allclose(simulate_gbm(scn), 50.0 * np.exp(0.1 * k * DELTA), rtol=1e-13, atol=0)


def test_seed_reuse_and_stream_separation():
    a = simulate_gbm(SynthScenario(sigma=0.2, seed=3))
    assert np.array_equal(a, simulate_gbm(SynthScenario(sigma=0.2, seed=3)))
    assert not np.array_equal(a, simulate_gbm(SynthScenario(sigma=0.2, seed=4)))
    assert not np.array_equal(a, simulate_gbm(SynthScenario(sigma=0.2, seed=3, role=ROLE_TEST)))


def test_log_increment_moments():
    sigma, mu, n = 0.25, 0.08, 100_000
    path = simulate_gbm(SynthScenario(sigma=sigma, mu=mu, path_days=n + 1, seed=11))
    inc = np.diff(np.log(path))
    se = sigma * math.sqrt(DELTA) / math.sqrt(n)
    assert abs(inc.mean() - (mu - 0.5 * sigma ** 2) * DELTA) < 4 * se
    # sample variance: SE of s^2 is about var * sqrt(2/n)
    var = sigma ** 2 * DELTA
    assert abs(inc.var(ddof=1) - var) < 4 * var * math.sqrt(2 / n)


def test_scenario_validation():
    with pytest.raises(ValueError):
        SynthScenario(sigma=-0.1)
    with pytest.raises(ValueError):
        SynthScenario(sigma=0.1, strike_grid=(0.9, 1.0))
    with pytest.raises(ValueError):
        SynthScenario(sigma=0.1, path_days=15)


# -- labeling --------------------------------------------------------------

def test_atm_quote_matches_bsm():
    scn = SynthScenario(sigma=0.17, path_days=60)
    path = simulate_gbm(scn)
    quotes, _ = label_options(path, scn)
    q = next(q for q in quotes if q.ttm_days == 10 and q.strike == q.spot)
    assert q.option_close == bsm_call(q.spot, q.spot, scn.rate, 0.17, 10 / 365)
    assert q.prev_option_close == bsm_call(q.prev_spot, q.strike, scn.rate, 0.17, 11 / 365)


def test_zero_vol_quotes_are_discounted_intrinsic():
    scn = SynthScenario(sigma=0.0, path_days=40)
    quotes, _ = label_options(simulate_gbm(scn), scn)
    for q in quotes:
        T = q.ttm_days / 365
        assert q.option_close == pytest.approx(max(q.spot - q.strike * math.exp(-scn.rate * T), 0.0),
                                               abs=1e-12)


def test_synthetic_quotes_pass_the_filters():
    scn = SynthScenario(sigma=0.2, path_days=80)
    quotes, _ = label_options(simulate_gbm(scn), scn)
    assert len(clean_and_filter(quotes, FilterConfig())) == len(quotes)
    assert len(quotes) == (80 - 20) * 3 * 5


def test_strike_grid_refinement_keeps_shared_quotes():
    base = SynthScenario(sigma=0.15, path_days=60)
    fine = dataclasses.replace(base, strike_grid=tuple(np.round(np.arange(0.96, 1.0401, 0.01), 2)))
    coarse_q, _ = label_options(simulate_gbm(base), base)
    fine_q, _ = label_options(simulate_gbm(fine), fine)
    assert set(coarse_q) <= set(fine_q)


def test_volatility_grid_changes_do_not_move_paths():
    one = synthlab.test_datasets([0.2], seed=0)[0.2]
    two = synthlab.test_datasets([0.1, 0.2], seed=0)[0.2]
    pd.testing.assert_frame_equal(one, two)


# -- featurized scenarios ---------------------------------------------------

def test_sigma_hat_tracks_sigma(synth_tests_small):
    for sigma, df in synth_tests_small.items():
        if sigma >= 0.05:
            assert abs(df["sigma_hat"].mean() / sigma - 1) < 0.1, sigma


def test_atm_ds_target_clusters_near_one(synth_tests_small):
    # at the money the approximation error is small, so U = iv/sigma_hat ~ sigma/sigma_hat
    for sigma in (0.10, 0.20, 0.30):
        df = synth_tests_small[sigma]
        atm = df[np.isclose(df["moneyness"], 1.0) & df["ds_valid"]]
        u = atm["ds_target"].to_numpy()
        assert 0.9 < np.median(u) < 1.15
        assert np.mean(np.abs(u - 1) < 0.25) > 0.75


def test_training_dataset_size(synth_train_12):
    assert len(synth_train_12) == (520 - 20) * 15
    assert set(synth_train_12["scenario_sigma"]) == {0.12}


# -- experiments ------------------------------------------------------------

@pytest.fixture(scope="module")
def curves(synth_bundle_12, synth_tests_small):
    return run_experiment_1({"s12": synth_bundle_12}, tests=synth_tests_small)


def _rmse(curves, approach, sigma):
    row = curves[(curves.approach == approach) & np.isclose(curves.sigma, sigma)]
    return float(row["rmse"].iloc[0])


def test_curve_layout(curves):
    assert list(curves.columns) == ["approach", "training_set", "sigma", "rmse", "n"]
    assert len(curves) == 2 * 7 and set(curves.approach) == {"HH", "DS"}


def test_own_distribution_is_easiest(curves):
    for a in ("HH", "DS"):
        sub = curves[curves.approach == a]
        assert float(sub.loc[sub["rmse"].idxmin(), "sigma"]) == pytest.approx(0.12)


def test_domain_shift_degrades_hh(curves):
    assert _rmse(curves, "HH", 0.30) > 5 * _rmse(curves, "HH", 0.10)


def test_ds_degrades_more_slowly_at_high_vol(curves):
    grow = {a: _rmse(curves, a, 0.30) - _rmse(curves, a, 0.14) for a in ("HH", "DS")}
    assert grow["DS"] < grow["HH"]
    assert _rmse(curves, "DS", 0.30) < _rmse(curves, "HH", 0.30)


def test_curves_are_deterministic(synth_bundle_12, synth_tests_small, curves):
    again = run_experiment_1({"s12": synth_bundle_12}, tests=synth_tests_small)
    pd.testing.assert_frame_equal(curves, again)


def test_zero_weight_ensemble_is_hh(synth_bundle_12, synth_tests_small):
    b = dataclasses.replace(synth_bundle_12, ensemble=EnsembleParams(0.0, 0.0, 0.12))
    c = run_experiment_2({"s12": b}, tests=synth_tests_small)
    hh = c[c.approach == "HH"]["rmse"].to_numpy()
    assert np.array_equal(c[c.approach == "E"]["rmse"].to_numpy(), hh)


def test_experiment_2_requires_ensemble(synth_bundle_12, synth_tests_small):
    with pytest.raises(ValueError):
        run_experiment_2({"s12": dataclasses.replace(synth_bundle_12, ensemble=None)},
                         tests=synth_tests_small)


def test_experiment_2_flags():
    curves = pd.DataFrame({
        "approach": ["HH", "DS", "E"] * 3,
        "training_set": ["a"] * 9,
        "sigma": [0.1] * 3 + [0.2] * 3 + [0.3] * 3,
        "rmse": [1.0, 2.0, 1.5, 1.0, 2.0, 0.9, 1.0, 2.0, 2.05],
        "n": [10] * 9})
    f = experiment_2_flags(curves).set_index("sigma")
    assert f["within_envelope"].tolist() == [True, False, False]
    assert f["e_best"].tolist() == [False, True, False]
    assert f["e_worst"].tolist() == [False, False, True]


def test_conclusions_survive_strike_grid_refinement():
    fine = tuple(np.round(np.arange(0.96, 1.0401, 0.01), 2))
    train = synthlab.pooled_dataset([0.12], synthlab.ROLE_TRAIN, seed=0, strike_grid=fine)
    tests = synthlab.test_datasets([0.10, 0.12, 0.30], seed=0, strike_grid=fine)
    bundle = train_bundle(train, SMALL_GBT, name="fine")
    c = run_experiment_1({"fine": bundle}, tests=tests)
    assert _rmse(c, "HH", 0.30) > 2 * _rmse(c, "HH", 0.10)
    assert _rmse(c, "DS", 0.30) < _rmse(c, "HH", 0.30)
    for a in ("HH", "DS"):
        sub = c[c.approach == a]
        assert float(sub.loc[sub["rmse"].idxmin(), "sigma"]) == pytest.approx(0.12)
