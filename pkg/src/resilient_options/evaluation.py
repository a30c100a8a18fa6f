"""Metrics, prediction on the normalized-price scale, and report exports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .dataset import feature_matrix
from .ensemble import EnsembleParams, blend, dsq
from .gbt import TrainedModel, predict
from .pricing import bsm_call
from .targets import price_from_ds_target

APPROACHES = ("HH", "DS", "E", "BSM")
N_BINS = 100


def rmse(errors) -> float:
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("rmse of an empty sample")
    return float(np.sqrt(np.mean(e * e)))


@dataclass
class ModelBundle:
    """HH and DS boosters trained on the same data, plus blend parameters."""

    hh: TrainedModel
    ds: TrainedModel
    ensemble: EnsembleParams | None = None
    name: str = "model"


def evaluable(df: pd.DataFrame) -> pd.DataFrame:
    """Rows every approach can price (a positive volatility estimate)."""
    return df[df["ds_valid"].to_numpy(dtype=bool)]


def predict_hh(model: TrainedModel, df: pd.DataFrame) -> np.ndarray:
    return predict(model, feature_matrix(df))


def predict_ds(model: TrainedModel, df: pd.DataFrame, floor: bool = True) -> np.ndarray:
    U = predict(model, feature_matrix(df))
    S = df["spot"].to_numpy()
    C = price_from_ds_target(U, S, df["moneyness"].to_numpy(), df["ttm_years"].to_numpy(),
                             df["rate"].to_numpy(), df["sigma_hat"].to_numpy())
    C = np.asarray(C, dtype=float)
    if floor:
        C = np.maximum(C, 0.0)
    return 100.0 * C / S


def predict_bsm(df: pd.DataFrame) -> np.ndarray:
    S = df["spot"].to_numpy()
    C = bsm_call(S, df["strike"].to_numpy(), df["rate"].to_numpy(),
                 df["sigma_hat"].to_numpy(), df["ttm_years"].to_numpy())
    return 100.0 * np.asarray(C, dtype=float) / S


def predict_normalized(kind: str, df: pd.DataFrame, bundle: ModelBundle | None = None,
                       floor: bool = True) -> np.ndarray:
    """Predicted ``100*C/S`` for ``kind`` in HH, DS, E, BSM."""
    kind = kind.upper()
    if kind == "BSM":
        return predict_bsm(df)
    if bundle is None:
        raise ValueError(f"{kind} predictions need trained models")
    if kind == "HH":
        return predict_hh(bundle.hh, df)
    if kind == "DS":
        return predict_ds(bundle.ds, df, floor)
    if kind == "E":
        if bundle.ensemble is None:
            raise ValueError("ensemble parameters are not calibrated")
        q = dsq(df["sigma_hat"].to_numpy(), bundle.ensemble.sigma0)
        return blend(predict_hh(bundle.hh, df), predict_ds(bundle.ds, df, floor), q, bundle.ensemble)
    raise ValueError(f"unknown approach {kind!r}")


@dataclass
class EvalReport:
    model_id: str
    approach: str
    split: str
    rmse: float
    n: int
    residuals: np.ndarray = field(repr=False)
    hist_counts: np.ndarray = field(repr=False)
    hist_edges: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {"model_id": self.model_id, "approach": self.approach, "split": self.split,
                "rmse": self.rmse, "n": self.n}

    def write(self, directory, stem: str) -> list[Path]:
        directory = Path(directory)
        paths = [directory / f"{stem}.json", directory / f"{stem}_residuals.csv",
                 directory / f"{stem}_histogram.csv"]
        doc = {**self.summary(), "hist_counts": self.hist_counts.tolist(),
               "hist_edges": self.hist_edges.tolist()}
        paths[0].write_text(json.dumps(doc, indent=2) + "\n")
        pd.DataFrame({"residual": self.residuals}).to_csv(paths[1], index=False, lineterminator="\n")
        pd.DataFrame({"bin_lo": self.hist_edges[:-1], "bin_hi": self.hist_edges[1:],
                      "count": self.hist_counts}).to_csv(paths[2], index=False, lineterminator="\n")
        return paths


def pooled_edges(residual_sets, n_bins: int = N_BINS) -> np.ndarray:
    pooled = np.concatenate([np.asarray(r, dtype=float) for r in residual_sets])
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, n_bins + 1)


def build_reports(actual, predictions: Mapping[str, np.ndarray], split: str,
                  model_id: str) -> dict[str, EvalReport]:
    """One report per approach. Residual = actual - predicted; histogram bins
    are shared across all approaches in ``predictions``."""
    actual = np.asarray(actual, dtype=float)
    residuals = {k: actual - np.asarray(p, dtype=float) for k, p in predictions.items()}
    edges = pooled_edges(residuals.values())
    out = {}
    for k, e in residuals.items():
        counts, _ = np.histogram(e, bins=edges)
        out[k] = EvalReport(model_id, k, split, rmse(e), int(e.size), e, counts, edges)
    return out


def evaluate_models(df: pd.DataFrame, bundle: ModelBundle | None, split: str,
                    approaches=APPROACHES, floor: bool = True) -> dict[str, EvalReport]:
    df = evaluable(df)
    if len(df) == 0:
        raise ValueError(f"split {split!r} has no evaluable rows")
    preds = {a: predict_normalized(a, df, bundle, floor) for a in approaches}
    model_id = bundle.name if bundle is not None else "benchmark"
    return build_reports(df["hh_target"].to_numpy(), preds, split, model_id)


QQ_LEVELS = np.arange(1, 100)


def qq_export(sample_a, sample_b, levels=QQ_LEVELS) -> pd.DataFrame:
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("Q-Q export needs two non-empty samples")
    return pd.DataFrame({"percentile": levels,
                         "quantile_a": np.percentile(a, levels),
                         "quantile_b": np.percentile(b, levels)})
