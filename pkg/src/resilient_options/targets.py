"""Scale-free regression targets and their inverses.

``hh`` is the normalized price ``100*C/S``. ``ds`` divides the closed-form
implied-volatility approximation by the volatility scalar, which makes
contracts on assets with different volatility levels comparable.
"""

from __future__ import annotations

import numpy as np

from .pricing import bharadia_iv


def _scalarize(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def discounted_moneyness(p, T, r):
    return _scalarize(np.asarray(p, dtype=float) * np.exp(-np.asarray(r, dtype=float) * np.asarray(T, dtype=float)))


def hh_target(C, S):
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise ValueError("spot must be positive")
    return _scalarize(100.0 * np.asarray(C, dtype=float) / S)


def price_from_hh_target(target, S):
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise ValueError("spot must be positive")
    return _scalarize(S * np.asarray(target, dtype=float) / 100.0)


def _check_ds_domain(S, T, rho):
    if np.any(np.asarray(rho) <= 0):
        raise ValueError("volatility scalar must be positive")
    if np.any(np.asarray(T) <= 0):
        raise ValueError("time to maturity must be positive")
    if np.any(np.asarray(S) <= 0):
        raise ValueError("spot must be positive")


def ds_target(C, S, p, T, r, rho):
    _check_ds_domain(S, T, rho)
    return _scalarize(np.asarray(bharadia_iv(C, S, p, T, r)) / np.asarray(rho, dtype=float))


def price_from_ds_target(U, S, p, T, r, rho):
    """Invert :func:`ds_target`: ``C = S*(rho*(1+p*)/2*sqrt(T/2pi)*U + (1-p*)/2)``."""
    _check_ds_domain(S, T, rho)
    S = np.asarray(S, dtype=float)
    T = np.asarray(T, dtype=float)
    p_star = np.asarray(p, dtype=float) * np.exp(-np.asarray(r, dtype=float) * T)
    C = S * (np.asarray(rho, dtype=float) * (1.0 + p_star) / 2.0
             * np.sqrt(T / (2.0 * np.pi)) * np.asarray(U, dtype=float)
             + (1.0 - p_star) / 2.0)
    return _scalarize(C)
