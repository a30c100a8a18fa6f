"""Volatility-shift weighted blending of the HH and DS predictions."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class EnsembleParams:
    lambda1: float
    lambda2: float
    sigma0: float

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("ensemble exponents must be non-negative")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "EnsembleParams":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class GridResult:
    lambda1_axis: np.ndarray
    lambda2_axis: np.ndarray
    surface: np.ndarray  # rmse[i, j] at (lambda1_axis[i], lambda2_axis[j])
    argmin: tuple[float, float]
    rmse_min: float

    def rows(self):
        for i, l1 in enumerate(self.lambda1_axis):
            for j, l2 in enumerate(self.lambda2_axis):
                yield float(l1), float(l2), float(self.surface[i, j])


def dsq(sigma_i, sigma0):
    """Relative distance of the current volatility from the training average."""
    if not np.all(np.asarray(sigma0) > 0):
        raise ValueError("sigma0 must be positive")
    out = np.abs(np.asarray(sigma_i, dtype=float) - sigma0) / sigma0
    return float(out) if out.ndim == 0 else out


def weight_ratio(dsq_value, lambda1: float, lambda2: float):
    """DS-to-HH weight ratio ``lambda1 * dsq**lambda2`` with ``0**0 == 1``."""
    # np.power already maps 0.0**0.0 to 1.0
    return lambda1 * np.power(np.asarray(dsq_value, dtype=float), lambda2)


def blend(p_hh, p_ds, dsq_value, params: EnsembleParams):
    p_hh = np.asarray(p_hh, dtype=float)
    p_ds = np.asarray(p_ds, dtype=float)
    w = weight_ratio(dsq_value, params.lambda1, params.lambda2)
    out = p_hh / (1.0 + w) + w / (1.0 + w) * p_ds
    # rounding must not leave the convex hull
    out = np.clip(out, np.minimum(p_hh, p_ds), np.maximum(p_hh, p_ds))
    return float(out) if out.ndim == 0 else out


def lambda_axis(lo: float = 0.0, hi: float = 5.0, step: float = 0.1) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 10)


def calibrate(hh_preds, ds_preds, dsq_values, true_targets,
              lambda1_axis=None, lambda2_axis=None) -> GridResult:
    """RMSE of the blend at every grid point; argmin prefers the lowest
    lambda1, then the lowest lambda2, among exactly tied minima."""
    hh = np.asarray(hh_preds, dtype=float)
    ds = np.asarray(ds_preds, dtype=float)
    q = np.asarray(dsq_values, dtype=float)
    y = np.asarray(true_targets, dtype=float)
    if not (hh.shape == ds.shape == q.shape == y.shape) or hh.ndim != 1:
        raise ValueError("calibration inputs must be equal-length vectors")
    if hh.size == 0:
        raise ValueError("empty calibration sample")
    l1 = lambda_axis() if lambda1_axis is None else np.asarray(lambda1_axis, dtype=float)
    l2 = lambda_axis() if lambda2_axis is None else np.asarray(lambda2_axis, dtype=float)
    lo, hi = np.minimum(hh, ds), np.maximum(hh, ds)
    surface = np.empty((len(l1), len(l2)))
    for j, b in enumerate(l2):
        w = l1[:, None] * np.power(q, b)[None, :]
        pred = np.clip(hh / (1.0 + w) + w / (1.0 + w) * ds, lo, hi)
        surface[:, j] = np.sqrt(np.mean((y - pred) ** 2, axis=1))
    flat = int(np.argmin(surface))  # first occurrence in row-major order
    i, j = divmod(flat, len(l2))
    return GridResult(l1, l2, surface, (float(l1[i]), float(l2[j])), float(surface[i, j]))


def sigma0_of_training_set(hist_vols) -> float:
    v = np.asarray(hist_vols, dtype=float)
    if v.size == 0:
        raise ValueError("empty training set")
    return float(np.mean(v))
