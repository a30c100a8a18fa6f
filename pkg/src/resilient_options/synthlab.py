"""Synthetic GBM markets for domain-shift stress tests.

Each scenario simulates one daily GBM path, writes BSM call prices for a
near-ATM strike grid at several maturities, and pushes the quotes through
the same filter and featurization code as archive data.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .dataset import featurize
from .ensemble import EnsembleParams, GridResult, lambda_axis, sigma0_of_training_set
from .evaluation import ModelBundle, evaluable, predict_normalized, rmse
from .features import DELTA, N_RETURNS
from .ingest import CleanOptionQuote, FilterConfig, clean_and_filter
from .pipeline import calibrate_on
from .pricing import bsm_call, sigma_grid

log = logging.getLogger(__name__)

ROLE_TRAIN, ROLE_TEST, ROLE_CALIBRATION = 0, 1, 2
YEAR_DAYS = 365.0


@dataclass(frozen=True)
class SynthScenario:
    sigma: float
    mu: float = 0.1
    path_days: int = 520
    rate: float = 0.05
    ttm_set: tuple = (10, 25, 40)
    strike_grid: tuple = (0.96, 0.98, 1.00, 1.02, 1.04)
    seed: int = 0
    role: int = ROLE_TRAIN
    s0: float = 100.0
    start: dt.date = dt.date(2001, 1, 1)

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.path_days <= N_RETURNS + 1:
            raise ValueError("path_days must exceed the return window")
        if any(abs(m - 1.0) > 0.04 + 1e-12 for m in self.strike_grid):
            raise ValueError("strike grid must stay within the near-ATM band")

    @property
    def symbol(self) -> str:
        return f"GBM{self.sigma * 100:05.2f}r{self.role}"

    def rng(self) -> np.random.Generator:
        # stream keyed by volatility, not grid position, so grids can be
        # refined or reordered without perturbing any path
        return np.random.default_rng([self.seed, int(round(self.sigma * 1e6)), self.role])


def simulate_gbm(scn: SynthScenario) -> np.ndarray:
    """Exact log-normal discretization with a 1/255-year step."""
    z = scn.rng().standard_normal(scn.path_days - 1)
    incr = (scn.mu - 0.5 * scn.sigma ** 2) * DELTA + scn.sigma * math.sqrt(DELTA) * z
    return scn.s0 * np.exp(np.concatenate([[0.0], np.cumsum(incr)]))


def trading_dates(scn: SynthScenario) -> list[dt.date]:
    return list(pd.bdate_range(scn.start, periods=scn.path_days).date)


def label_options(path, scn: SynthScenario, dates: Sequence[dt.date] | None = None):
    """BSM-priced quotes for every day with a full return window behind it.

    Returns ``(quotes, underlying)`` where ``underlying`` maps the scenario
    symbol to its daily closes.
    """
    path = np.asarray(path, dtype=float)
    dates = trading_dates(scn) if dates is None else list(dates)
    first = N_RETURNS + 1
    if len(path) <= first:
        raise ValueError("path too short for a return window and a previous day")
    ks = np.arange(first, len(path))
    quotes = []
    for ttm in scn.ttm_set:
        for m in scn.strike_grid:
            S, S_prev = path[ks], path[ks - 1]
            K = m * S
            C = bsm_call(S, K, scn.rate, scn.sigma, ttm / YEAR_DAYS)
            C_prev = bsm_call(S_prev, K, scn.rate, scn.sigma, (ttm + 1) / YEAR_DAYS)
            for j, k in enumerate(ks):
                d = dates[k]
                quotes.append(CleanOptionQuote(
                    symbol=scn.symbol, date=d, expiry=d + dt.timedelta(days=ttm),
                    strike=float(K[j]), spot=float(S[j]), option_close=float(C[j]),
                    prev_option_close=float(C_prev[j]), prev_spot=float(S_prev[j])))
    quotes.sort(key=lambda q: (q.date, q.expiry, q.strike))
    return quotes, {scn.symbol: dict(zip(dates, path.tolist()))}


def scenario_dataset(scn: SynthScenario) -> pd.DataFrame:
    path = simulate_gbm(scn)
    quotes, underlying = label_options(path, scn)
    quotes = clean_and_filter(quotes, FilterConfig())
    df = featurize(quotes, underlying, scn.rate, year_days=YEAR_DAYS)
    df["scenario_sigma"] = scn.sigma
    return df


def pooled_dataset(sigmas: Sequence[float], role: int, seed: int = 0, **scenario_kw) -> pd.DataFrame:
    frames = [scenario_dataset(SynthScenario(sigma=float(s), seed=seed, role=role, **scenario_kw))
              for s in sigmas]
    return pd.concat(frames, ignore_index=True)


DEFAULT_TRAIN_SIGMAS = tuple(sigma_grid(0.08, 0.16, 0.01))
DEFAULT_TEST_SIGMAS = tuple(sigma_grid(0.01, 0.30, 0.01))


def test_datasets(sigmas=DEFAULT_TEST_SIGMAS, seed: int = 0, **scenario_kw) -> dict[float, pd.DataFrame]:
    return {float(s): scenario_dataset(SynthScenario(sigma=float(s), seed=seed, role=ROLE_TEST,
                                                     **scenario_kw)) for s in sigmas}


def _curves(bundles: Mapping[str, ModelBundle], tests: Mapping[float, pd.DataFrame],
            approaches: Sequence[str]) -> pd.DataFrame:
    rows = []
    for name, bundle in bundles.items():
        for sigma, df in tests.items():
            df = evaluable(df)
            actual = df["hh_target"].to_numpy()
            for a in approaches:
                pred = predict_normalized(a, df, bundle)
                rows.append({"approach": a, "training_set": name, "sigma": sigma,
                             "rmse": rmse(actual - pred), "n": len(df)})
    return pd.DataFrame(rows, columns=["approach", "training_set", "sigma", "rmse", "n"])


def run_experiment_1(bundles: Mapping[str, ModelBundle], sigmas=DEFAULT_TEST_SIGMAS,
                     seed: int = 0, tests: Mapping[float, pd.DataFrame] | None = None,
                     **scenario_kw) -> pd.DataFrame:
    """RMSE of the HH and DS models of every training set across test volatilities."""
    tests = tests if tests is not None else test_datasets(sigmas, seed, **scenario_kw)
    return _curves(bundles, tests, ("HH", "DS"))


def run_experiment_2(bundles: Mapping[str, ModelBundle], sigmas=DEFAULT_TEST_SIGMAS,
                     seed: int = 0, tests: Mapping[float, pd.DataFrame] | None = None,
                     **scenario_kw) -> pd.DataFrame:
    """HH, DS and ensemble curves; bundles must carry ensemble parameters."""
    for name, b in bundles.items():
        if b.ensemble is None:
            raise ValueError(f"bundle {name!r} has no ensemble parameters")
    tests = tests if tests is not None else test_datasets(sigmas, seed, **scenario_kw)
    return _curves(bundles, tests, ("HH", "DS", "E"))


def experiment_2_flags(curves: pd.DataFrame, tol: float = 0.01) -> pd.DataFrame:
    """Per (training set, sigma): where the ensemble sits relative to HH and DS.

    ``e_worst`` marks the ensemble exceeding the worse constituent by more than
    ``tol`` of that constituent's RMSE.
    """
    wide = curves.pivot_table(index=["training_set", "sigma"], columns="approach",
                              values="rmse").reset_index()
    lo = np.minimum(wide["HH"], wide["DS"])
    hi = np.maximum(wide["HH"], wide["DS"])
    wide["within_envelope"] = (wide["E"] >= lo * (1 - 1e-12)) & (wide["E"] <= hi * (1 + 1e-12))
    wide["e_best"] = wide["E"] < lo
    wide["e_worst"] = wide["E"] > hi * (1 + tol)
    return wide


def calibrate_synthetic(bundle: ModelBundle, train_df: pd.DataFrame, mode: str = "holdout",
                        train_sigmas=DEFAULT_TRAIN_SIGMAS,
                        tests: Mapping[float, pd.DataFrame] | None = None,
                        seed: int = 0, axis=None, **scenario_kw) -> tuple[EnsembleParams, GridResult]:
    """Calibrate blend weights.

    ``holdout`` scores the models on fresh paths drawn from the training
    volatilities (an independent sample from the training distribution).
    ``test`` calibrates on the pooled test grid, mirroring calibration on test
    data.
    """
    sigma0 = sigma0_of_training_set(train_df["sigma_hat"].to_numpy())
    axis = lambda_axis() if axis is None else axis
    if mode == "holdout":
        sample = pooled_dataset(train_sigmas, ROLE_CALIBRATION, seed, **scenario_kw)
    elif mode == "test":
        if tests is None:
            raise ValueError("test-mode calibration needs the test datasets")
        sample = pd.concat(list(tests.values()), ignore_index=True)
    else:
        raise ValueError(f"unknown synthetic calibration mode {mode!r}")
    grid = calibrate_on(bundle, sample, sigma0, axis)
    bundle.ensemble = EnsembleParams(grid.argmin[0], grid.argmin[1], sigma0)
    return bundle.ensemble, grid


def with_sigma(scn: SynthScenario, sigma: float) -> SynthScenario:
    return replace(scn, sigma=sigma)
