"""Black-Scholes-Merton pricing, the closed-form implied-volatility
approximation, the Heston volatility scalar and the approximation-error study.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BsmInputs:
    spot: float
    strike: float
    rate: float
    vol: float
    ttm: float

    def __post_init__(self):
        if not self.spot > 0:
            raise ValueError(f"spot must be positive, got {self.spot}")
        if self.strike < 0 or self.ttm < 0 or self.vol < 0:
            raise ValueError("strike, ttm and vol must be non-negative")


@dataclass(frozen=True)
class HestonVolParams:
    kappa: float
    theta: float
    xi: float
    current_var: float
    horizon: float

    def __post_init__(self):
        if min(self.kappa, self.theta, self.current_var, self.horizon) <= 0:
            raise ValueError("kappa, theta, current_var and horizon must be positive")


def norm_cdf(x):
    """Standard normal CDF (Cephes ``ndtr``, erf/erfc based, ~1e-16 abs error)."""
    return ndtr(x)


def bsm_call(spot, strike, rate, vol, ttm):
    """European call value. Broadcasts over numpy arrays.

    Degenerate corners (``vol * sqrt(ttm) == 0`` or ``strike == 0``) return the
    discounted intrinsic value ``max(spot - strike * exp(-rate * ttm), 0)``.
    """
    s, k, r, v, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in
                                          (spot, strike, rate, vol, ttm)))
    disc_k = k * np.exp(-r * t)
    intrinsic = np.maximum(s - disc_k, 0.0)
    vsqt = v * np.sqrt(t)
    regular = (vsqt > 0) & (k > 0)
    out = np.array(intrinsic, dtype=float)  # 0-d ufunc results are scalars
    if np.any(regular):
        sr, kr, dk, vr = s[regular], k[regular], disc_k[regular], vsqt[regular]
        with np.errstate(over="ignore"):  # vanishing vol: d1 -> +-inf, ndtr handles it
            d1 = np.log(sr / dk) / vr + 0.5 * vr
        d2 = d1 - vr
        price = sr * ndtr(d1) - dk * ndtr(d2)
        # clamp rounding excursions outside the no-arbitrage band
        out[regular] = np.clip(price, intrinsic[regular], sr)
    if out.ndim == 0:
        return float(out)
    return out


def bsm_call_inputs(inputs: BsmInputs) -> float:
    return bsm_call(inputs.spot, inputs.strike, inputs.rate, inputs.vol, inputs.ttm)


def bharadia_iv(price, spot, moneyness, ttm, rate):
    """Closed-form near-ATM implied volatility approximation.

    ``sqrt(2*pi/T) * (C / (S*(1+p*)/2) - (1-p*)/(1+p*))`` with ``p* = p*exp(-rT)``.
    Prices below the affine floor ``S*(1-p*)/2`` give negative values; these
    are returned unchanged.
    """
    ttm = np.asarray(ttm, dtype=float)
    if np.any(ttm <= 0):
        raise ValueError("time to maturity must be positive")
    spot = np.asarray(spot, dtype=float)
    if np.any(spot <= 0):
        raise ValueError("spot must be positive")
    p_star = np.asarray(moneyness, dtype=float) * np.exp(-np.asarray(rate, dtype=float) * ttm)
    iv = np.sqrt(2.0 * np.pi / ttm) * (
        np.asarray(price, dtype=float) / (spot * (1.0 + p_star) / 2.0)
        - (1.0 - p_star) / (1.0 + p_star)
    )
    if iv.ndim == 0:
        return float(iv)
    return iv


def _one_minus_exp_over_x(x: float) -> float:
    if x < 1e-8:
        return 1.0 - x / 2.0
    return -math.expm1(-x) / x


def heston_expected_variance(params: HestonVolParams) -> float:
    """Time-averaged expected CIR variance over the horizon."""
    frac = _one_minus_exp_over_x(params.kappa * params.horizon)
    return params.theta - (params.theta - params.current_var) * frac


def heston_rho(params: HestonVolParams) -> float:
    """Volatility scalar for a Heston variance process: root of the mean
    expected variance over the remaining life of the option."""
    return math.sqrt(heston_expected_variance(params))


@dataclass
class ErrorStudyGrid:
    sigma_axis: np.ndarray
    T: float
    p: float
    rate: float
    U: np.ndarray
    matrix: np.ndarray
    scatter: np.ndarray  # columns: max/min vol ratio, relative error

    def max_error(self, min_sigma: float = 0.0) -> float:
        mask = self.sigma_axis >= min_sigma - 1e-12
        return float(self.matrix[np.ix_(mask, mask)].max())

    def max_error_ratio(self, max_ratio: float) -> float:
        sel = self.scatter[:, 0] <= max_ratio + 1e-12
        return float(self.scatter[sel, 1].max())


def ds_invariant(vol, ttm, moneyness, rate, spot=1.0):
    """The domain-shift target of a BSM-priced contract with scalar = vol."""
    vol = np.asarray(vol, dtype=float)
    price = bsm_call(spot, moneyness * spot, rate, vol, ttm)
    return bharadia_iv(price, spot, moneyness, ttm, rate) / vol


def approx_error_study(sigma_axis, T: float = 0.2, p: float = 1.0,
                       rate: float = 0.0) -> ErrorStudyGrid:
    """Pairwise relative error of the domain-shift target between two
    constant-volatility BSM assets.

    The target is spot independent under BSM, so the supremum over spots is
    attained at any spot; spot 1 is used.
    """
    sigma_axis = np.asarray(sigma_axis, dtype=float)
    if np.any(sigma_axis <= 0):
        raise ValueError("volatilities must be positive")
    U = np.asarray(ds_invariant(sigma_axis, T, p, rate), dtype=float).reshape(-1)
    u1, u2 = U[:, None], U[None, :]
    denom = np.maximum(u1, u2)
    if np.any(denom <= 0):
        raise ValueError("non-positive target on the grid; relative error undefined")
    matrix = np.abs(u1 - u2) / denom
    s1, s2 = sigma_axis[:, None], sigma_axis[None, :]
    ratio = np.maximum(s1, s2) / np.minimum(s1, s2)
    iu = np.triu_indices(len(sigma_axis))
    scatter = np.column_stack([ratio[iu], matrix[iu]])
    return ErrorStudyGrid(sigma_axis, T, p, rate, U, matrix, scatter)


def sigma_grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 12)
