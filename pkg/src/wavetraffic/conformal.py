"""Weighted split-conformal prediction intervals over a point forecaster.

Scores are absolute errors scaled by a rolling uncertainty estimate;
the interval half-width at each step is the windowed order-statistic
quantile of past scores times the current uncertainty scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError

__all__ = [
    "conformal_score",
    "weighted_quantile",
    "interval",
    "empirical_coverage",
    "rolling_uncertainty",
    "ConformalCalibrator",
    "calibrate_stream",
]

_XI_FLOOR = 1e-8


def conformal_score(y, pred, xi):
    """W = |y - pred| / xi, elementwise; xi is floored at 1e-8."""
    xi = np.maximum(np.asarray(xi, dtype=np.float64), _XI_FLOOR)
    return np.abs(np.asarray(y, dtype=np.float64) - np.asarray(pred, dtype=np.float64)) / xi


def weighted_quantile(scores, beta: float, mode: str = "order") -> float:
    """Windowed conformal quantile of the given scores.

    ``mode="order"`` (default): the ceil((1-beta)(n+1))-th order
    statistic, +inf when that rank exceeds n.  ``mode="literal"`` keeps
    the printed weighted-mean form for comparison only: the mean of the
    windowed scores when it reaches 1-beta, else +inf.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise DimensionError("weighted_quantile: empty score window")
    if not 0.0 < beta < 1.0:
        raise ParameterError(f"weighted_quantile: beta must be in (0, 1), got {beta}")
    if mode == "literal":
        m = scores.mean() * scores.size / (scores.size + 1)
        return float(m) if m >= 1.0 - beta else math.inf
    if mode != "order":
        raise ParameterError(f"weighted_quantile: unknown mode {mode!r}")
    n = scores.size
    rank = math.ceil((1.0 - beta) * (n + 1))
    if rank > n:
        return math.inf
    return float(np.sort(scores)[rank - 1])


def interval(pred, xi, cq):
    """Symmetric band pred +/- cq * xi."""
    pred = np.asarray(pred, dtype=np.float64)
    xi = np.maximum(np.asarray(xi, dtype=np.float64), _XI_FLOOR)
    cq = np.asarray(cq, dtype=np.float64)
    if np.any(cq < 0):
        raise ParameterError("interval: quantile must be nonnegative")
    half = cq * xi
    return pred - half, pred + half


def empirical_coverage(lo, hi, y) -> float:
    lo, hi, y = (np.asarray(a, dtype=np.float64) for a in (lo, hi, y))
    if not (lo.shape == hi.shape == y.shape):
        raise DimensionError(
            f"empirical_coverage: misaligned shapes {lo.shape}, {hi.shape}, {y.shape}"
        )
    return float(np.mean((y >= lo) & (y <= hi)))


def rolling_uncertainty(residuals, window: int) -> np.ndarray:
    """Causal rolling mean absolute residual.

    Entry t uses residuals [t-window, t); the first entry uses the
    final value of the seed array handed to the calibrator instead, so
    this helper expects at least one residual before the first forecast.
    """
    r = np.abs(np.asarray(residuals, dtype=np.float64))
    out = np.empty(len(r))
    csum = np.concatenate([[0.0], np.cumsum(r)])
    for t in range(len(r)):
        lo = max(0, t - window)
        width = t - lo
        out[t] = (csum[t] - csum[lo]) / width if width else r[0]
    return np.maximum(out, _XI_FLOOR)


@dataclass
class ConformalCalibrator:
    """Sequential score window for one forecast stream.

    Seed it with calibration-split residuals, then alternate
    ``bounds`` / ``update`` in time order over the test stream.
    """

    window: int = 288
    beta: float = 0.1
    mode: str = "order"
    scores: list = field(default_factory=list)
    abs_residuals: list = field(default_factory=list)

    def __post_init__(self):
        if self.window < 1:
            raise ParameterError(f"window must be >= 1, got {self.window}")
        if not 0.0 < self.beta < 1.0:
            raise ParameterError(f"beta must be in (0, 1), got {self.beta}")

    def seed(self, y_cal, pred_cal):
        y_cal = np.asarray(y_cal, dtype=np.float64)
        pred_cal = np.asarray(pred_cal, dtype=np.float64)
        if y_cal.shape != pred_cal.shape:
            raise DimensionError("seed: calibration arrays misaligned")
        for y, p in zip(y_cal, pred_cal):
            self.update(y, p)

    def _xi(self) -> float:
        recent = self.abs_residuals[-self.window :]
        if not recent:
            raise ParameterError("calibrator has no residuals yet; seed it first")
        return max(float(np.mean(recent)), _XI_FLOOR)

    def bounds(self, pred: float):
        """(lo, hi) for the next forecast given the current window."""
        xi = self._xi()
        cq = weighted_quantile(self.scores[-self.window :], self.beta, self.mode)
        lo, hi = interval(pred, xi, cq if math.isfinite(cq) else 0.0)
        if math.isinf(cq):
            return -math.inf, math.inf
        return float(lo), float(hi)

    def update(self, y: float, pred: float):
        resid = abs(float(y) - float(pred))
        # first observation has no past scale; its score carries no information
        self.scores.append(resid / self._xi() if self.abs_residuals else 0.0)
        self.abs_residuals.append(resid)


def calibrate_stream(y_cal, pred_cal, y_test, pred_test,
                     window: int = 288, beta: float = 0.1, mode: str = "order"):
    """Run one stream end to end; returns (lo, hi, coverage).

    Calibration residuals seed the score window; each test step first
    emits an interval, then folds the realized observation in.
    """
    cal = ConformalCalibrator(window=window, beta=beta, mode=mode)
    cal.seed(y_cal, pred_cal)
    y_test = np.asarray(y_test, dtype=np.float64)
    pred_test = np.asarray(pred_test, dtype=np.float64)
    if y_test.shape != pred_test.shape:
        raise DimensionError("calibrate_stream: test arrays misaligned")
    lo = np.empty(len(y_test))
    hi = np.empty(len(y_test))
    for t, (y, p) in enumerate(zip(y_test, pred_test)):
        lo[t], hi[t] = cal.bounds(p)
        cal.update(y, p)
    return lo, hi, empirical_coverage(lo, hi, y_test)
