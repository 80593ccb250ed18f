"""Accuracy metrics of an estimate series against ground truth."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

STAT_FIELDS = ("mean", "std_dev", "min", "q1", "median", "q3", "max")


class UndefinedRangeError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    std_dev: float
    min: float
    q1: float
    median: float
    q3: float
    max: float


@dataclass(frozen=True)
class EvaluationReport:
    rmse: float
    nrmse: Optional[float]  # None when the truth series is constant
    error_stats: ErrorStats
    n_windows: int

    def to_json(self) -> dict:
        return {"rmse": self.rmse, "nrmse": self.nrmse, "n_windows": self.n_windows,
                "error_stats": asdict(self.error_stats)}


def _pair(estimates, truth) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(estimates, dtype=float)
    g = np.asarray(truth, dtype=float)
    if e.ndim != 1 or g.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if len(e) != len(g):
        raise ValueError(f"length mismatch: {len(e)} estimates vs {len(g)} truth values")
    if len(e) == 0:
        raise ValueError("empty series")
    return e, g


def rmse(estimates: Sequence[float], truth: Sequence[float]) -> float:
    e, g = _pair(estimates, truth)
    return math.sqrt(float(np.sum((e - g) ** 2)) / len(e))


def nrmse(estimates: Sequence[float], truth: Sequence[float]) -> float:
    """RMSE divided by the range of the truth series."""
    e, g = _pair(estimates, truth)
    span = float(g.max() - g.min())
    if span <= 0:
        raise UndefinedRangeError("truth series is constant; NRMSE is undefined")
    return rmse(e, g) / span


def quantile(sorted_values: Sequence[float], p: float) -> float:
    """Linear interpolation between order statistics (h = (n - 1) p)."""
    n = len(sorted_values)
    h = (n - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, n - 1)
    return float(sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo]))


def error_statistics(estimates: Sequence[float], truth: Sequence[float]) -> ErrorStats:
    """Summary of signed errors (estimate - truth); population standard deviation."""
    e, g = _pair(estimates, truth)
    err = np.sort(e - g)
    return ErrorStats(mean=float(err.mean()), std_dev=float(err.std()),
                      min=float(err[0]), q1=quantile(err, 0.25), median=quantile(err, 0.5),
                      q3=quantile(err, 0.75), max=float(err[-1]))


def evaluate(estimates: Sequence[float], truth: Sequence[float]) -> EvaluationReport:
    try:
        nr = nrmse(estimates, truth)
    except UndefinedRangeError:
        nr = None
    return EvaluationReport(rmse=rmse(estimates, truth), nrmse=nr,
                            error_stats=error_statistics(estimates, truth),
                            n_windows=len(estimates))


def improvement_ratio(baseline: EvaluationReport, calibrated: EvaluationReport) -> float:
    """Relative reduction of the absolute mean error, ``1 - |cal| / |base|``."""
    if baseline.n_windows != calibrated.n_windows:
        raise ValueError("reports cover different numbers of windows")
    base = abs(baseline.error_stats.mean)
    if base == 0:
        raise ZeroDivisionError("baseline mean error is zero")
    return 1.0 - abs(calibrated.error_stats.mean) / base


def rmse_reduction(baseline: EvaluationReport, calibrated: EvaluationReport) -> float:
    if baseline.rmse == 0:
        raise ZeroDivisionError("baseline RMSE is zero")
    return 1.0 - calibrated.rmse / baseline.rmse
