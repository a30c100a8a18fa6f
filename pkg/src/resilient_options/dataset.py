"""Featurized datasets: quotes + underlying closes + rates -> feature/target table."""

from __future__ import annotations

import bisect
import datetime as dt
import logging
from collections import Counter
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .features import (FEATURE_NAMES, FEATURE_SCHEMA_VERSION, N_RETURNS, RETURN_FEATURES,
                       centered_log_returns_2d, historical_vol_2d)
from .ingest import CleanOptionQuote, QUOTE_COLUMNS
from .targets import hh_target, ds_target

log = logging.getLogger(__name__)

CALENDAR_DAYS = 365.0
HEADER_LINE = f"# resilient-options featurized dataset {FEATURE_SCHEMA_VERSION}"
DERIVED_COLUMNS = ["ttm_years", "moneyness", "sigma_hat", "hh_target", "ds_target", "ds_valid"]
COLUMNS = QUOTE_COLUMNS + FEATURE_NAMES + DERIVED_COLUMNS


class RateTable:
    """Piecewise-constant rate lookup: the latest rate on or before a date."""

    def __init__(self, rates: float | Mapping[dt.date, float]):
        if isinstance(rates, (int, float)):
            self.constant = float(rates)
            self.dates, self.values = [], []
        else:
            self.constant = None
            items = sorted(rates.items())
            self.dates = [d for d, _ in items]
            self.values = [float(v) for _, v in items]
            if not items:
                raise ValueError("empty rate table")

    def __call__(self, day: dt.date) -> float:
        if self.constant is not None:
            return self.constant
        i = bisect.bisect_right(self.dates, day) - 1
        if i < 0:
            raise KeyError(f"no rate on or before {day}")
        return self.values[i]

    @classmethod
    def from_csv(cls, path, percent: bool = True) -> "RateTable":
        """Two-column CSV (date, rate). ``percent`` divides yields by 100."""
        df = pd.read_csv(path)
        dates = pd.to_datetime(df.iloc[:, 0], format="mixed", dayfirst=True).dt.date
        vals = df.iloc[:, 1].astype(float) / (100.0 if percent else 1.0)
        return cls(dict(zip(dates, vals)))


def featurize(quotes: Sequence[CleanOptionQuote],
              underlying: Mapping[str, Mapping[dt.date, float]],
              rates, window_end: str = "t", year_days: float = CALENDAR_DAYS,
              counts: Counter | None = None) -> pd.DataFrame:
    """Build the feature/target table.

    ``window_end="t"`` ends the 20-close window on the quote date, ``"t-1"`` on
    the previous trading date. Quotes without full window coverage are skipped
    and counted under ``counts["no_window"]``.
    """
    if window_end not in ("t", "t-1"):
        raise ValueError("window_end must be 't' or 't-1'")
    rate_of = rates if callable(rates) else RateTable(rates)
    counts = counts if counts is not None else Counter()
    series = {}
    for sym, closes in underlying.items():
        days = sorted(closes)
        series[sym] = (days, {d: i for i, d in enumerate(days)},
                       np.array([closes[d] for d in days], dtype=float))

    kept, windows, rate_col = [], [], []
    shift = 0 if window_end == "t" else 1
    for q in quotes:
        if q.symbol not in series:
            counts["no_window"] += 1
            continue
        days, pos, prices = series[q.symbol]
        i = pos.get(q.date)
        if i is None or i - shift - N_RETURNS < 0:
            counts["no_window"] += 1
            continue
        end = i - shift
        kept.append(q)
        windows.append(prices[end - N_RETURNS:end + 1])
        rate_col.append(rate_of(q.date))
    if counts["no_window"]:
        log.info("skipped %d quotes without a full return window", counts["no_window"])

    df = pd.DataFrame([[getattr(q, c) for c in QUOTE_COLUMNS] for q in kept], columns=QUOTE_COLUMNS)
    if not kept:
        return df.reindex(columns=COLUMNS)
    W = np.vstack(windows)
    R = centered_log_returns_2d(W)
    F = np.sort(R, axis=1)
    for k, name in enumerate(RETURN_FEATURES):
        df[name] = F[:, k]
    df["ttm_days"] = [q.ttm_days for q in kept]
    df["inv_moneyness"] = df["spot"] / df["strike"]
    df["prev_norm_price"] = 100.0 * df["prev_option_close"] / df["prev_spot"]
    df["rate"] = np.asarray(rate_col, dtype=float)
    df["ttm_years"] = df["ttm_days"] / year_days
    df["moneyness"] = df["strike"] / df["spot"]
    df["sigma_hat"] = historical_vol_2d(F)
    df["hh_target"] = hh_target(df["option_close"].to_numpy(), df["spot"].to_numpy())
    valid = df["sigma_hat"].to_numpy() > 0
    ds = np.full(len(df), np.nan)
    if valid.any():
        sub = df[valid]
        ds[valid] = ds_target(sub["option_close"].to_numpy(), sub["spot"].to_numpy(),
                              sub["moneyness"].to_numpy(), sub["ttm_years"].to_numpy(),
                              sub["rate"].to_numpy(), sub["sigma_hat"].to_numpy())
    df["ds_target"] = ds
    df["ds_valid"] = valid
    counts["degenerate_vol"] += int((~valid).sum())
    return df[COLUMNS]


def feature_matrix(df: pd.DataFrame) -> np.ndarray:
    return df[FEATURE_NAMES].to_numpy(dtype=float)


def write_dataset(df: pd.DataFrame, path) -> None:
    out = df.copy()
    for c in ("date", "expiry"):
        out[c] = [d.isoformat() for d in out[c]]
    with Path(path).open("w", newline="") as fh:
        fh.write(HEADER_LINE + "\n")
        out.to_csv(fh, index=False, lineterminator="\n")


def read_dataset(path) -> pd.DataFrame:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().rstrip("\n")
        if first != HEADER_LINE:
            raise ValueError(f"{path}: unsupported dataset header {first!r}")
        df = pd.read_csv(fh, dtype={"symbol": str}, float_precision="round_trip")
    if list(df.columns) != COLUMNS:
        raise ValueError(f"{path}: column layout does not match feature schema {FEATURE_SCHEMA_VERSION}")
    for c in ("date", "expiry"):
        df[c] = [dt.date.fromisoformat(s) for s in df[c]]
    df["ds_valid"] = df["ds_valid"].astype(bool)
    return df
