"""Evaluation measures for damage curves, drift recovery and alignment profiles."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError, InvalidParameterError, OutOfRangeError
from .imaging import AffineParams, as_image


@dataclass(frozen=True)
class RegressionReport:
    mae: float
    mse: float
    rmse: float
    r2: float
    var_err: float

    def as_dict(self) -> dict:
        return asdict(self)

    def format_row(self, digits: int = 4) -> str:
        return " | ".join(f"{v:.{digits}f}" for v in (self.mae, self.mse, self.rmse, self.r2, self.var_err))


def damage_intensity(lam) -> float:
    """Mean signal loss ``mean(1 - lam)``."""
    lam = np.asarray(lam, dtype=float)
    if lam.size == 0:
        raise DimensionError("empty decay map")
    return float(np.mean(1.0 - lam))


def regression_report(pred, gt) -> RegressionReport:
    pred = np.asarray(pred, dtype=float).ravel()
    gt = np.asarray(gt, dtype=float).ravel()
    if pred.shape != gt.shape or pred.size < 2:
        raise DimensionError("pred and gt must have equal length >= 2")
    err = pred - gt
    ss_tot = float(np.sum((gt - gt.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateInputError("ground-truth series is constant; R^2 undefined")
    mse = float(np.mean(err**2))
    return RegressionReport(
        mae=float(np.mean(np.abs(err))),
        mse=mse,
        rmse=math.sqrt(mse),
        r2=1.0 - float(np.sum(err**2)) / ss_tot,
        var_err=float(np.var(err, ddof=1)),
    )


def mean_report(reports) -> RegressionReport:
    """Field-wise average of several reports (e.g. over seeded trials)."""
    reports = list(reports)
    if not reports:
        raise InvalidParameterError("no reports to average")
    return RegressionReport(*(float(np.mean([getattr(r, f) for r in reports]))
                              for f in ("mae", "mse", "rmse", "r2", "var_err")))


def drift_error(pred: AffineParams, gt: AffineParams) -> float:
    """L1 translation error in pixels."""
    return abs(pred.tx_px - gt.tx_px) + abs(pred.ty_px - gt.ty_px)


def rotation_error(pred: AffineParams, gt: AffineParams) -> float:
    """Absolute angle difference in degrees, wrapped to [0, 180]."""
    d = (pred.theta_deg - gt.theta_deg) % 360.0
    return min(d, 360.0 - d)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def smooth1d(profile, sigma: float) -> np.ndarray:
    """Gaussian smoothing truncated at 3 sigma, edge values replicated."""
    profile = np.asarray(profile, dtype=float)
    if sigma < 0:
        raise InvalidParameterError("sigma must be >= 0")
    if sigma == 0:
        return profile.copy()
    k = gaussian_kernel1d(sigma)
    r = len(k) // 2
    padded = np.pad(profile, r, mode="edge")
    return np.convolve(padded, k, mode="valid")


def side_profile(a, b, row: int, sigma: float = 1.0):
    """Smoothed intensity profiles of ``row`` in two images."""
    a = as_image(a, "a")
    b = as_image(b, "b")
    if a.shape != b.shape:
        raise DimensionError("images must share a shape")
    if not (0 <= row < a.shape[0]):
        raise OutOfRangeError(f"row {row} outside [0, {a.shape[0]})")
    return smooth1d(a[row], sigma), smooth1d(b[row], sigma)


def profile_lag(pa, pb, max_lag=None) -> int:
    """Lag (in samples) maximizing the cross-correlation of ``pb`` shifted onto ``pa``.

    A positive value means ``pb`` is displaced towards higher indices.
    """
    pa = np.asarray(pa, float) - np.mean(pa)
    pb = np.asarray(pb, float) - np.mean(pb)
    n = len(pa)
    max_lag = n - 1 if max_lag is None else max_lag
    best, best_lag = -np.inf, 0
    for lag in sorted(range(-max_lag, max_lag + 1), key=abs):
        if lag >= 0:
            c = np.dot(pa[:n - lag], pb[lag:])
        else:
            c = np.dot(pa[-lag:], pb[:n + lag])
        if c > best:
            best, best_lag = c, lag
    return best_lag
