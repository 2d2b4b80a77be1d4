"""Percentile bootstrap intervals and Spearman rank correlation."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .retention import patient_dsc_rc, retention_grid

BOOTSTRAP_METHOD = "percentile"


@dataclass(frozen=True)
class BootstrapConfig:
    n_resamples: int = 1000
    confidence_level: float = 0.90
    seed: int = 0
    exhaustive: bool = False

    def __post_init__(self):
        if self.n_resamples < 100 and not self.exhaustive:
            raise ValueError("n_resamples must be at least 100")
        if not 0.0 < self.confidence_level < 1.0:
            raise ValueError("confidence_level must lie in (0, 1)")

    @property
    def percentiles(self) -> tuple[float, float]:
        tail = (1.0 - self.confidence_level) / 2.0
        return 100.0 * tail, 100.0 * (1.0 - tail)


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lo: float
    hi: float

    def overlaps(self, other: "IntervalEstimate") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def to_dict(self) -> dict:
        return {"point": self.point, "lo": self.lo, "hi": self.hi}


def _resample_indices(n: int, cfg: BootstrapConfig):
    """Yield index arrays; resample b uses its own stream seeded by (seed, b)."""
    if cfg.exhaustive:
        for combo in itertools.product(range(n), repeat=n):
            yield np.array(combo)
    else:
        for b in range(cfg.n_resamples):
            yield np.random.default_rng((cfg.seed, b)).integers(0, n, size=n)


def bootstrap_statistic(
    n: int, statistic: Callable[[np.ndarray], float], point: float, cfg: BootstrapConfig
) -> IntervalEstimate:
    if n < 2:
        raise ValueError("bootstrap needs at least two values")
    if cfg.exhaustive and n > 7:
        raise ValueError("exhaustive bootstrap is limited to n <= 7")
    stats = np.array([statistic(idx) for idx in _resample_indices(n, cfg)])
    lo, hi = np.percentile(stats, cfg.percentiles)
    return IntervalEstimate(point, float(lo), float(hi))


def bootstrap_mean(values: Sequence[float], cfg: BootstrapConfig = BootstrapConfig()) -> IntervalEstimate:
    x = np.asarray(values, dtype=np.float64)
    return bootstrap_statistic(len(x), lambda idx: float(np.mean(x[idx])), float(np.mean(x)) if len(x) else math.nan, cfg)


def bootstrap_patient_auc(
    patients: Sequence[tuple[float, float]],
    cfg: BootstrapConfig = BootstrapConfig(),
    grid: Optional[np.ndarray] = None,
) -> IntervalEstimate:
    """Interval for the patient-scale DSC retention AUC, rebuilding the curve per resample.

    ``patients`` holds ``(dsc, score)`` pairs. Resampled duplicates are kept
    distinct by their draw position.
    """
    grid = retention_grid() if grid is None else grid
    rows = [(float(d), float(s)) for d, s in patients]

    def auc_of(idx) -> float:
        return patient_dsc_rc([(f"{j:06d}", *rows[i]) for j, i in enumerate(idx)], grid).auc

    point = auc_of(np.arange(len(rows))) if len(rows) >= 2 else math.nan
    return bootstrap_statistic(len(rows), auc_of, point, cfg)


@dataclass(frozen=True)
class SpearmanResult:
    rho: Optional[float]
    n: int
    dropped: int


def spearman_rho(x: Sequence[Optional[float]], y: Sequence[Optional[float]]) -> SpearmanResult:
    """Pearson correlation of midranks; pairs with a None/NaN entry are dropped.

    ``rho`` is None when either variable is constant.
    """
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    pairs = [
        (float(a), float(b))
        for a, b in zip(x, y)
        if a is not None and b is not None and not (math.isnan(a) or math.isnan(b))
    ]
    dropped = len(x) - len(pairs)
    if len(pairs) < 3:
        raise ValueError("spearman_rho needs at least three complete pairs")
    a, b = (rankdata(col) for col in zip(*pairs))
    a -= a.mean()
    b -= b.mean()
    den = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if den == 0.0:
        return SpearmanResult(None, len(pairs), dropped)
    rho = float(np.dot(a, b)) / den
    return SpearmanResult(max(-1.0, min(1.0, rho)), len(pairs), dropped)
