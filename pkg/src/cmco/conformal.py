"""MC-dropout ensembles, split-conformal calibration and interval diagnostics.

Pipeline for a trained model:

1. ``mc_predict`` runs ``n_c`` dropout-active passes and reduces them to a
   per-location mean and (population) standard deviation.
2. ``calibrate`` scores a held-out calibration split with the normalized
   residual |y - mu| / sigma and keeps, per location, the k-th smallest
   score with k = ceil((1 - alpha)(n + 1)).
3. ``build_intervals`` forms mu +/- z * q * sigma for new inputs, and
   ``evaluate_intervals`` reports per-sample coverage, mean relative error,
   failure rate and outlier flags.

Pass ``k`` of every ensemble draws its masks from stream ``k`` of the same
base seed, so calibration and test inputs see the same ``n_c`` sub-networks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import deeponet as don
from .errors import ConfigError, InfeasibleCalibrationError, ShapeError
from .nn import RngStream

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8
REL_ERR_EPS = 1e-8
DEFAULT_Z = 1.96
FAILURE_THRESHOLD_PCT = 10.0
ERROR_THRESHOLD_PCT = 20.0


@dataclass
class EnsembleStats:
    mean: np.ndarray  # (..., P)
    std: np.ndarray  # (..., P)
    n_c: int
    samples: np.ndarray | None = None  # (n_c, ..., P)


def ensemble_stats(samples, keep=True) -> EnsembleStats:
    """Mean and population standard deviation over the leading pass axis."""
    samples = np.asarray(samples, dtype=np.float64)
    n_c = samples.shape[0]
    mu = samples.sum(axis=0) / n_c
    sigma = np.sqrt(((mu - samples) ** 2).sum(axis=0) / n_c)
    return EnsembleStats(mu, sigma, n_c, samples if keep else None)


def mc_predict(model, u, grid, n_c=10, base_seed=0, retain_samples=True) -> EnsembleStats:
    """Ensemble ``n_c`` dropout-active forward passes.

    ``u`` may be one sequence (T, C) or a batch (N, T, C); the statistics
    then have shape (P,) or (N, P).  Passes are reduced in index order, so
    the result does not depend on how passes are scheduled.
    """
    if n_c < 2:
        raise ConfigError(f"MC-dropout needs n_c >= 2 passes, got {n_c}")
    samples = np.stack([
        don.forward(model, u, grid, dropout_active=True, rng=RngStream(base_seed, k))
        for k in range(n_c)
    ])
    return ensemble_stats(samples, keep=retain_samples)


def nonconformity_scores(stats: EnsembleStats, truths, sigma_floor=SIGMA_FLOOR):
    """e = |y - mu| / max(sigma, sigma_floor), elementwise."""
    truths = np.asarray(truths, dtype=np.float64)
    if truths.shape != stats.mean.shape:
        raise ShapeError(f"truth shape {truths.shape} != ensemble shape {stats.mean.shape}")
    floored = stats.std < sigma_floor
    if np.any(floored):
        log.warning("%d of %d ensemble stds below sigma_floor=%g", int(floored.sum()),
                    floored.size, sigma_floor)
    return np.abs(truths - stats.mean) / np.maximum(stats.std, sigma_floor)


def conformal_rank(n, alpha):
    """k = ceil((1 - alpha)(n + 1)), the order statistic used as the quantile.

    Computed in exact rational arithmetic so values like 0.95 * 20 land on
    the right integer.  Raises when k > n.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    level = 1 - Fraction(alpha)
    k = math.ceil(level * (n + 1))
    if k > n:
        raise InfeasibleCalibrationError(n, alpha, minimum_calibration_size(alpha))
    return k


def minimum_calibration_size(alpha):
    level = 1 - Fraction(alpha)
    n = 1
    while math.ceil(level * (n + 1)) > n:
        n += 1
    return n


def conformal_quantile(scores, alpha):
    """k-th smallest score along axis 0 (per location when ``scores`` is (n, P))."""
    scores = np.asarray(scores, dtype=np.float64)
    k = conformal_rank(scores.shape[0], alpha)
    return np.partition(scores, k - 1, axis=0)[k - 1]


@dataclass
class ConformalCalibration:
    q: np.ndarray  # (P,)
    alpha: float
    z: float
    n_cal: int
    n_c: int
    sigma_floor: float = SIGMA_FLOOR
    mc_seed: int = 0


def calibrate(model, u_cal, y_cal, grid, alpha=0.05, z=DEFAULT_Z, n_c=10, base_seed=0,
              sigma_floor=SIGMA_FLOOR):
    """Fit per-location quantiles on a calibration split.

    Returns ``(calibration, ensemble_stats)``.
    """
    y_cal = np.asarray(y_cal, dtype=np.float64)
    conformal_rank(y_cal.shape[0], alpha)  # fail before the expensive ensemble
    stats = mc_predict(model, u_cal, grid, n_c, base_seed, retain_samples=False)
    scores = nonconformity_scores(stats, y_cal, sigma_floor)
    q = conformal_quantile(scores, alpha)
    return ConformalCalibration(q, alpha, z, y_cal.shape[0], n_c, sigma_floor, base_seed), stats


def build_intervals(stats: EnsembleStats, calib: ConformalCalibration, z=None):
    """``(lower, upper) = mu -/+ z * q * max(sigma, floor)``."""
    if stats.mean.shape[-1] != calib.q.shape[0]:
        raise ShapeError(f"ensemble has {stats.mean.shape[-1]} points, calibration {calib.q.shape[0]}")
    z = calib.z if z is None else z
    half = z * calib.q * np.maximum(stats.std, calib.sigma_floor)
    return stats.mean - half, stats.mean + half


def raw_intervals(stats: EnsembleStats, z=DEFAULT_Z):
    """Uncalibrated MC-dropout band mu +/- z * sigma (q fixed at one)."""
    return stats.mean - z * stats.std, stats.mean + z * stats.std


# ---------------------------------------------------------------- diagnostics


def _inside(y, lower, upper):
    y = np.asarray(y, dtype=np.float64)
    if not (y.shape == np.shape(lower) == np.shape(upper)):
        raise ShapeError(f"shape mismatch {y.shape}, {np.shape(lower)}, {np.shape(upper)}")
    return (lower <= y) & (y <= upper)


def empirical_coverage(y, lower, upper):
    """Fraction of locations inside the closed interval (per row for 2-D input)."""
    inside = _inside(y, lower, upper)
    return inside.sum(axis=-1) / inside.shape[-1]


def failure_rate(y, lower, upper):
    """Percentage of locations outside the interval; equals 100 - 100 * coverage exactly."""
    return 100.0 - 100.0 * empirical_coverage(y, lower, upper)


def mean_relative_error(mu, y, eps=REL_ERR_EPS):
    """Mean of |(mu - y) / (y + eps)| in percent (per row for 2-D input)."""
    mu = np.asarray(mu, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mu.shape != y.shape:
        raise ShapeError(f"shape mismatch {mu.shape} vs {y.shape}")
    return np.mean(np.abs((mu - y) / (y + eps)), axis=-1) * 100.0


def flag_outliers(failure_pct, error_pct, failure_threshold=FAILURE_THRESHOLD_PCT,
                  error_threshold=ERROR_THRESHOLD_PCT):
    """Critical outliers: high failure rate and high relative error together."""
    return (np.asarray(failure_pct) > failure_threshold) & (np.asarray(error_pct) > error_threshold)


@dataclass
class IntervalReport:
    coverage: np.ndarray  # (N,)
    mean_rel_err_pct: np.ndarray
    failure_rate_pct: np.ndarray
    outlier: np.ndarray
    lower: np.ndarray  # (N, P)
    upper: np.ndarray

    def __len__(self):
        return self.coverage.shape[0]


def evaluate_intervals(truths, stats: EnsembleStats, calib: ConformalCalibration, z=None,
                       eps=REL_ERR_EPS, failure_threshold=FAILURE_THRESHOLD_PCT,
                       error_threshold=ERROR_THRESHOLD_PCT) -> IntervalReport:
    truths = np.atleast_2d(np.asarray(truths, dtype=np.float64))
    lower, upper = build_intervals(stats, calib, z)
    lower, upper = np.atleast_2d(lower), np.atleast_2d(upper)
    cov = empirical_coverage(truths, lower, upper)
    fail = 100.0 - 100.0 * cov
    err = mean_relative_error(np.atleast_2d(stats.mean), truths, eps)
    return IntervalReport(cov, err, fail, flag_outliers(fail, err, failure_threshold, error_threshold),
                          lower, upper)


def coverage_summary(coverage, target=0.95):
    """Average / min / max coverage (percent) and counts at or above / below target.

    Uses ``math.fsum`` so the average is independent of summation order and
    can be recomputed exactly from a written report.
    """
    cov = [float(c) for c in coverage]
    if not cov:
        raise ConfigError("empty coverage list")
    return {
        "n_samples": len(cov),
        "average_coverage_pct": 100.0 * math.fsum(cov) / len(cov),
        "min_coverage_pct": 100.0 * min(cov),
        "max_coverage_pct": 100.0 * max(cov),
        "count_ge_target": sum(c >= target for c in cov),
        "count_lt_target": sum(c < target for c in cov),
    }
