"""Run configuration and the train / calibrate stages shared by the CLI and
the synthetic laboratory."""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import feature_matrix
from .ensemble import EnsembleParams, GridResult, calibrate, dsq, lambda_axis, sigma0_of_training_set
from .evaluation import ModelBundle, evaluable, predict_normalized
from .features import FEATURE_NAMES
from .gbt import GbtConfig, TrainedModel, fit
from .ingest import DEFAULT_DATE_FORMATS, DEFAULT_SCHEMA, DEFAULT_SPLIT, FilterConfig

log = logging.getLogger(__name__)

CALIBRATION_MODES = ("holdout", "test", "range")


@dataclass
class CalibrationConfig:
    # holdout: tail of the training dates, scored by models fitted on the head
    # test: the typical + atypical test splits (leaks test data into the blend)
    # range: quotes dated within [start, end] across all splits
    mode: str = "holdout"
    holdout_fraction: float = 0.2
    start: str | None = None
    end: str | None = None
    lambda_lo: float = 0.0
    lambda_hi: float = 5.0
    lambda_step: float = 0.1

    def __post_init__(self):
        if self.mode not in CALIBRATION_MODES:
            raise ValueError(f"calibration mode must be one of {CALIBRATION_MODES}")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")

    def axis(self) -> np.ndarray:
        return lambda_axis(self.lambda_lo, self.lambda_hi, self.lambda_step)


@dataclass
class PipelineConfig:
    split_dates: tuple = tuple(d.isoformat() for d in DEFAULT_SPLIT)
    filter: FilterConfig = field(default_factory=FilterConfig)
    schema: dict = field(default_factory=lambda: dict(DEFAULT_SCHEMA))
    date_formats: tuple = DEFAULT_DATE_FORMATS
    window_end: str = "t"
    year_days: float = 365.0
    rate: float | None = None
    rate_file: str | None = None
    rate_in_percent: bool = True
    gbt: GbtConfig = field(default_factory=GbtConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    floor_prices: bool = True

    def boundaries(self) -> tuple:
        return tuple(dt.date.fromisoformat(d) for d in self.split_dates)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "filter" in d:
            d["filter"] = FilterConfig(**d["filter"])
        if "gbt" in d:
            d["gbt"] = GbtConfig(**d["gbt"])
        if "calibration" in d:
            d["calibration"] = CalibrationConfig(**d["calibration"])
        for k in ("split_dates", "date_formats"):
            if k in d:
                d[k] = tuple(d[k])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def train_approach(df: pd.DataFrame, approach: str, cfg: GbtConfig) -> TrainedModel:
    """Fit one booster: HH on the normalized price, DS on the shift target
    (rows with a degenerate volatility estimate are excluded for DS)."""
    approach = approach.upper()
    if approach == "HH":
        sub, target = df, "hh_target"
    elif approach == "DS":
        sub, target = evaluable(df), "ds_target"
    else:
        raise ValueError(f"cannot train approach {approach!r}")
    if len(sub) < 2:
        raise ValueError(f"not enough rows to train {approach} ({len(sub)})")
    return fit(feature_matrix(sub), sub[target].to_numpy(dtype=float), cfg, list(FEATURE_NAMES))


def train_bundle(df: pd.DataFrame, cfg: GbtConfig, name: str = "model") -> ModelBundle:
    return ModelBundle(train_approach(df, "HH", cfg), train_approach(df, "DS", cfg), None, name)


def split_tail(df: pd.DataFrame, fraction: float) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Split by date so the last ``fraction`` of distinct dates form the tail."""
    dates = np.array(sorted(set(df["date"])))
    n_tail = max(1, int(math.ceil(fraction * len(dates))))
    if n_tail >= len(dates):
        raise ValueError("training data spans too few dates for a held-out tail")
    cut = dates[-n_tail]
    mask = np.array([d >= cut for d in df["date"]])
    return df[~mask], df[mask]


def calibrate_on(bundle: ModelBundle, sample: pd.DataFrame, sigma0: float,
                 axis: np.ndarray, floor: bool = True) -> GridResult:
    sample = evaluable(sample)
    if len(sample) == 0:
        raise ValueError("empty calibration sample")
    hh = predict_normalized("HH", sample, bundle, floor)
    ds = predict_normalized("DS", sample, bundle, floor)
    q = dsq(sample["sigma_hat"].to_numpy(), sigma0)
    return calibrate(hh, ds, q, sample["hh_target"].to_numpy(), axis, axis)


def calibrate_bundle(bundle: ModelBundle, train_df: pd.DataFrame, cfg: PipelineConfig,
                     test_dfs: list[pd.DataFrame] = ()) -> tuple[EnsembleParams, GridResult]:
    """Choose (lambda1, lambda2) on the configured calibration sample and attach
    the result to ``bundle``."""
    cal = cfg.calibration
    sigma0 = sigma0_of_training_set(train_df["sigma_hat"].to_numpy())
    axis = cal.axis()
    if cal.mode == "holdout":
        head, tail = split_tail(train_df, cal.holdout_fraction)
        log.info("holdout calibration: %d head rows, %d tail rows", len(head), len(tail))
        aux = train_bundle(head, cfg.gbt, name=f"{bundle.name}-head")
        sigma0_head = sigma0_of_training_set(head["sigma_hat"].to_numpy())
        grid = calibrate_on(aux, tail, sigma0_head, axis, cfg.floor_prices)
    elif cal.mode == "test":
        if not test_dfs:
            raise ValueError("test-mode calibration needs test splits")
        grid = calibrate_on(bundle, pd.concat(test_dfs, ignore_index=True), sigma0, axis,
                            cfg.floor_prices)
    else:
        if not (cal.start and cal.end):
            raise ValueError("range calibration needs start and end dates")
        lo, hi = dt.date.fromisoformat(cal.start), dt.date.fromisoformat(cal.end)
        pool = pd.concat([train_df, *test_dfs], ignore_index=True)
        sample = pool[[lo <= d <= hi for d in pool["date"]]]
        grid = calibrate_on(bundle, sample, sigma0, axis, cfg.floor_prices)
    params = EnsembleParams(grid.argmin[0], grid.argmin[1], sigma0)
    bundle.ensemble = params
    return params, grid
