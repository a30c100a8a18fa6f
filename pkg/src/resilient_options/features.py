"""Return-window features and historical volatility estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_RETURNS = 19
TRADING_DAYS = 255
DELTA = 1.0 / TRADING_DAYS

FEATURE_SCHEMA_VERSION = "v1"
RETURN_FEATURES = [f"F{i}" for i in range(1, N_RETURNS + 1)]
FEATURE_NAMES = RETURN_FEATURES + ["ttm_days", "inv_moneyness", "prev_norm_price", "rate"]


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class ReturnWindow:
    """``n + 1`` consecutive daily closes, oldest first."""

    prices: tuple[float, ...]

    def __post_init__(self):
        if len(self.prices) < 3:
            raise FeatureError("return window needs at least 3 prices")
        if any(not (p > 0) for p in self.prices):
            raise FeatureError("prices must be positive")

    @property
    def n(self) -> int:
        return len(self.prices) - 1


@dataclass(frozen=True)
class VolEstimate:
    hist_vol: float
    rho: float

    @property
    def degenerate(self) -> bool:
        return not self.rho > 0


@dataclass(frozen=True)
class FeatureVector:
    order_stats: tuple[float, ...]
    ttm_days: int
    inv_moneyness: float
    prev_norm_price: float
    rate: float

    def as_array(self) -> np.ndarray:
        return np.array([*self.order_stats, self.ttm_days, self.inv_moneyness,
                         self.prev_norm_price, self.rate], dtype=float)


def centered_log_returns(prices) -> np.ndarray:
    """Daily log returns minus their window mean.

    The mean is taken as ``log(S_t / S_{t-n}) / n`` so the telescoping sum of
    the result is zero up to rounding.
    """
    prices = np.asarray(prices.prices if isinstance(prices, ReturnWindow) else prices, dtype=float)
    if prices.ndim != 1 or len(prices) < 2:
        raise FeatureError("need a 1-d price path with at least two points")
    if np.any(~(prices > 0)):
        raise FeatureError("prices must be positive")
    logs = np.log(prices)
    raw = np.diff(logs)
    n = len(raw)
    return raw - (logs[-1] - logs[0]) / n


def centered_log_returns_2d(paths: np.ndarray) -> np.ndarray:
    """Row-wise :func:`centered_log_returns` for a ``(m, n+1)`` array."""
    paths = np.asarray(paths, dtype=float)
    if np.any(~(paths > 0)):
        raise FeatureError("prices must be positive")
    logs = np.log(paths)
    n = paths.shape[1] - 1
    return np.diff(logs, axis=1) - ((logs[:, -1] - logs[:, 0]) / n)[:, None]


def order_statistics(x) -> np.ndarray:
    return np.sort(np.asarray(x, dtype=float), kind="stable")


def historical_vol(returns, trading_days: int = TRADING_DAYS) -> VolEstimate:
    """Annualized sample standard deviation (``n - 1`` divisor).

    Under a constant-volatility assumption the volatility scalar equals the
    historical volatility.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise FeatureError("need at least two returns")
    sig = float(np.std(r, ddof=1)) * math.sqrt(trading_days)
    return VolEstimate(hist_vol=sig, rho=sig)


def historical_vol_2d(returns: np.ndarray, trading_days: int = TRADING_DAYS) -> np.ndarray:
    return np.std(np.asarray(returns, dtype=float), axis=1, ddof=1) * math.sqrt(trading_days)


def build_feature_vector(quote, window: ReturnWindow, rate: float) -> FeatureVector:
    """Assemble the 23 features for one contract-day.

    Order: 19 ascending centered returns, TTM in days, S/K, 100*C_prev/S_prev,
    rate.
    """
    if window.n != N_RETURNS:
        raise FeatureError(f"window must hold {N_RETURNS + 1} prices, got {window.n + 1}")
    stats = order_statistics(centered_log_returns(window))
    return FeatureVector(
        order_stats=tuple(float(v) for v in stats),
        ttm_days=int(quote.ttm_days),
        inv_moneyness=quote.spot / quote.strike,
        prev_norm_price=100.0 * quote.prev_option_close / quote.prev_spot,
        rate=float(rate),
    )
