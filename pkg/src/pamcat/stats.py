"""Growth-rate fits for Monte Carlo log-moments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["SlopeFit", "fit_log_slope", "weighted_slope"]


@dataclass
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    log_means: np.ndarray
    log_stderr: np.ndarray


def weighted_slope(t, y, var=None):
    """Weighted least-squares line through ``(t, y)``; returns ``(slope, intercept, coeffs)``.

    ``coeffs`` are the linear weights with ``slope = coeffs @ y``, which lets
    callers propagate any covariance of ``y``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two points to fit a slope")
    w = np.ones_like(t) if var is None else 1.0 / np.maximum(np.asarray(var, dtype=float), 1e-300)
    if var is not None and np.all(np.asarray(var) == 0):
        w = np.ones_like(t)
    tw = np.sum(w * t) / np.sum(w)
    d = t - tw
    coeffs = w * d / np.sum(w * d * d)
    slope = float(coeffs @ y)
    intercept = float(np.sum(w * y) / np.sum(w) - slope * tw)
    return slope, intercept, coeffs


def fit_log_slope(times, batch_means, shift, scale: float = 1.0) -> SlopeFit:
    """Slope of ``scale * log E[W_t]`` from batch means of ``W_t exp(-shift_t)``.

    ``batch_means`` has shape ``(n_batches, len(times))``; batches are
    independent while different times within a batch are correlated.  The
    points are weighted by their delta-method variances and the slope error
    uses the full delta-method covariance, estimated across batches.
    """
    times = np.asarray(times, dtype=float)
    bm = np.asarray(batch_means, dtype=float)
    b = bm.shape[0]
    m = bm.mean(axis=0)
    if np.any(~(m > 0)):
        raise ValueError("batch means must be positive")
    y = scale * (np.asarray(shift, dtype=float) + np.log(m))
    rel = bm / m[None, :]
    cov = np.atleast_2d(np.cov(rel, rowvar=False, ddof=1)) / b * scale * scale if b > 1 else \
        np.zeros((len(times), len(times)))
    var = np.diag(cov).copy()
    slope, intercept, coeffs = weighted_slope(times, y, var)
    se = math.sqrt(max(float(coeffs @ cov @ coeffs), 0.0))
    return SlopeFit(slope, se, intercept, y, np.sqrt(var))
