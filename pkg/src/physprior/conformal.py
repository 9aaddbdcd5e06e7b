"""Ensemble statistics and split conformal calibration of pointwise intervals."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidArgument


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    mean: np.ndarray
    std: np.ndarray
    M: int


def ensemble_stats(samples) -> EnsembleStats:
    """Pointwise mean and unbiased standard deviation over axis 0."""
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim < 1 or s.shape[0] < 2:
        raise InvalidArgument("ensemble statistics need at least two members")
    return EnsembleStats(s.mean(axis=0), s.std(axis=0, ddof=1), s.shape[0])


def nonconformity(z_true, stats: EnsembleStats, floor: float) -> np.ndarray:
    """``|z - mu| / max(sigma, floor)`` pointwise."""
    if not floor > 0:
        raise InvalidArgument("floor must be positive")
    z = np.asarray(z_true, dtype=np.float64)
    if z.shape != stats.mean.shape:
        raise InvalidArgument(f"shape mismatch {z.shape} vs {stats.mean.shape}")
    return np.abs(z - stats.mean) / np.maximum(stats.std, floor)


def conformal_rank(n: int, alpha: float) -> int:
    """1-based rank ``ceil((n + 1)(1 - alpha))`` of the calibrated quantile."""
    # guard against (n+1)(1-alpha) landing a hair above an integer
    return int(math.ceil(round((n + 1) * (1.0 - alpha), 9)))


def calibrate(scores, alpha: float) -> float:
    """Conformal quantile of pooled scores; ``inf`` when the rank exceeds the count.

    ``scores`` may be one array or a sequence of per-instance arrays; all
    values are pooled.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidArgument("alpha must lie in (0, 1)")
    if isinstance(scores, np.ndarray):
        pooled = scores.ravel()
    else:
        parts = [np.asarray(s, dtype=np.float64).ravel() for s in scores]
        pooled = np.concatenate(parts) if parts else np.zeros(0)
    if pooled.size == 0:
        raise InvalidArgument("no calibration scores")
    if not np.all(np.isfinite(pooled)):
        raise InvalidArgument("calibration scores must be finite")
    k = conformal_rank(pooled.size, alpha)
    if k > pooled.size:
        return math.inf
    return float(np.partition(pooled, k - 1)[k - 1])


def conformal_interval(stats: EnsembleStats, q_hat: float, floor: float):
    """``mu -/+ q_hat * max(sigma, floor)``."""
    if not q_hat >= 0:
        raise InvalidArgument("q_hat must be non-negative")
    half = q_hat * np.maximum(stats.std, floor)
    return stats.mean - half, stats.mean + half


def gaussian_interval(stats: EnsembleStats, z: float = 1.96, floor: float = 0.0):
    """Uncalibrated ensemble interval ``mu -/+ z * sigma``."""
    half = z * np.maximum(stats.std, floor)
    return stats.mean - half, stats.mean + half


def picp(truth, lo, hi) -> float:
    """Percentage of points with ``lo <= truth <= hi``."""
    t = np.asarray(truth, dtype=np.float64)
    lo, hi = np.asarray(lo), np.asarray(hi)
    if not (t.shape == lo.shape == hi.shape):
        raise InvalidArgument("truth and bounds must share one shape")
    return 100.0 * float(np.mean((lo <= t) & (t <= hi)))


@dataclass(frozen=True, eq=False)
class CalibrationRecord:
    class_id: int
    task: str
    alpha: float
    n: int
    n_pool: int
    q_hat: float
    digest: str

    @classmethod
    def build(cls, class_id, task, alpha, score_sets) -> "CalibrationRecord":
        sets = [np.asarray(s, dtype=np.float64).ravel() for s in score_sets]
        if not sets:
            raise InvalidArgument("at least one calibration instance is required")
        pooled = np.concatenate(sets)
        return cls(int(class_id), task, float(alpha), len(sets), pooled.size,
                   calibrate(pooled, alpha), score_digest(pooled))

    def to_text(self) -> str:
        rows = [("class", self.class_id), ("task", self.task), ("alpha", repr(self.alpha)),
                ("n", self.n), ("n_pool", self.n_pool), ("q_hat", repr(self.q_hat)),
                ("score_digest", self.digest)]
        return "".join(f"{k}={v}\n" for k, v in rows)

    @classmethod
    def from_text(cls, text: str) -> "CalibrationRecord":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        try:
            return cls(int(kv["class"]), kv["task"], float(kv["alpha"]), int(kv["n"]),
                       int(kv["n_pool"]), float(kv["q_hat"]), kv["score_digest"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad calibration record ({exc})", 0) from None


def score_digest(scores) -> str:
    return hashlib.sha256(np.ascontiguousarray(scores, dtype="<f8").tobytes()).hexdigest()[:16]
