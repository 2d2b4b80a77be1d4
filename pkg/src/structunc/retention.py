"""Error retention curves at voxel, lesion and patient scale.

A retention curve tracks a quality metric while the most uncertain predictions
are progressively corrected. The x-axis is the retained fraction: 1 means
nothing corrected, 0 means everything corrected. Ties in uncertainty are broken
by ascending voxel index / lesion id / patient id, so curves depend only on the
ranking of the scores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .structural import FPL, TPL, LesionRecord
from .volume import as_mask, check_same_shape, linear_index

DEFAULT_TAU = 2.5e-3

VOXEL_DSC = "voxel-DSC"
LESION_LPPV = "lesion-LPPV"
PATIENT_DSC = "patient-DSC"
CURVE_KINDS = (VOXEL_DSC, LESION_LPPV, PATIENT_DSC)

IDEAL = "ideal"
RANDOM = "random"
WORST = "worst"
BASELINES = (IDEAL, RANDOM, WORST)


def retention_grid(tau: float = DEFAULT_TAU) -> np.ndarray:
    """Uniform retention fractions 0, tau, ..., 1. ``1/tau`` must be an integer."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    steps = round(1.0 / tau)
    if abs(steps * tau - 1.0) > 1e-9:
        raise ValueError(f"1/tau must be an integer so the grid ends at 1, got tau={tau}")
    return np.arange(steps + 1) / steps


def _grid_steps(grid: np.ndarray) -> int:
    steps = len(grid) - 1
    if steps < 1 or grid[0] != 0.0 or grid[-1] != 1.0:
        raise ValueError("retention grid must run from 0 to 1")
    return steps


def trapezoid_auc(fractions: np.ndarray, values: np.ndarray) -> float:
    x = np.asarray(fractions, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


@dataclass(frozen=True, eq=False)
class RetentionCurve:
    kind: str
    measure: str
    fractions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in CURVE_KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if len(self.fractions) != len(self.values):
            raise ValueError("fractions and values differ in length")

    @property
    def auc(self) -> float:
        return trapezoid_auc(self.fractions, self.values)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "measure": self.measure,
            "auc": self.auc,
            "points": [[float(f), float(v)] for f, v in zip(self.fractions, self.values)],
        }


def curve_auc(c: RetentionCurve) -> float:
    return c.auc


def _descending_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by decreasing score, ties by increasing position."""
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any():
        raise ValueError("uncertainty scores contain NaN")
    return np.lexsort((np.arange(len(scores)), -scores))


def _interpolate(native: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Map a native curve sampled at fractions (n-k)/n, k=0..n, onto ``grid``."""
    n = len(native) - 1
    xs = np.arange(n + 1) / n  # ascending fractions k/n
    ys = native[::-1]  # native[k] sits at fraction (n-k)/n
    return np.interp(grid, xs, ys)


def _dice_from_counts(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray) -> np.ndarray:
    num = 2.0 * tp
    den = num + fp + fn
    out = np.ones(len(den), dtype=np.float64)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def _replacement_counts(n_items: int, grid: np.ndarray) -> np.ndarray:
    """ceil((1 - f) * n) for every grid fraction f, in exact integer arithmetic."""
    steps = _grid_steps(grid)
    i = np.arange(steps + 1, dtype=np.int64)
    return -((-(steps - i) * n_items) // steps)


def _voxel_curve_from_order(
    order: np.ndarray, err_fp: np.ndarray, err_fn: np.ndarray, tp0: int, grid: np.ndarray
) -> np.ndarray:
    fp0, fn0 = int(err_fp.sum()), int(err_fn.sum())
    cum_fp = np.concatenate(([0], np.cumsum(err_fp[order])))
    cum_fn = np.concatenate(([0], np.cumsum(err_fn[order])))
    k = _replacement_counts(len(order), grid)
    return _dice_from_counts(tp0 + cum_fn[k], fp0 - cum_fp[k], fn0 - cum_fn[k])


def _voxel_errors(pred, gt, brain):
    pred, gt, brain = as_mask(pred, "prediction"), as_mask(gt, "ground truth"), as_mask(brain, "brain mask")
    check_same_shape(pred, gt, brain)
    b = linear_index(brain)
    if not b.any():
        raise ValueError("empty brain mask")
    p = linear_index(pred)[b]
    g = linear_index(gt)[b]
    return b, (p & ~g).astype(np.int64), (~p & g).astype(np.int64), int(np.count_nonzero(p & g))


def voxel_dsc_rc(
    unc: np.ndarray,
    pred: np.ndarray,
    gt: np.ndarray,
    brain: np.ndarray,
    grid: np.ndarray,
    measure: str = "",
) -> RetentionCurve:
    """DSC as the most uncertain brain voxels of ``pred`` are replaced by ``gt``.

    At fraction f the ceil((1-f)*|B|) most uncertain voxels are replaced.
    """
    check_same_shape(unc, pred)
    b, err_fp, err_fn, tp0 = _voxel_errors(pred, gt, brain)
    scores = linear_index(np.asarray(unc, dtype=np.float64))[b]
    order = _descending_order(scores)
    values = _voxel_curve_from_order(order, err_fp, err_fn, tp0, grid)
    return RetentionCurve(VOXEL_DSC, measure, np.asarray(grid), values)


def _voxel_baseline_order(kind: str, err_fp, err_fn, rng_seed: int) -> np.ndarray:
    n = len(err_fp)
    if kind == IDEAL:
        # errors first; false negatives before false positives, which keeps the
        # ideal curve pointwise maximal over all orderings
        return _descending_order(2 * err_fn + err_fp)
    if kind == WORST:
        # correct voxels first, then false positives: pointwise minimal
        return _descending_order(-(2 * err_fn + err_fp))
    if kind == RANDOM:
        return _descending_order(np.random.default_rng(rng_seed).random(n))
    raise ValueError(f"unknown baseline {kind!r}")


def voxel_baseline(kind: str, pred, gt, brain, grid, rng_seed: int = 0) -> RetentionCurve:
    b, err_fp, err_fn, tp0 = _voxel_errors(pred, gt, brain)
    order = _voxel_baseline_order(kind, err_fp, err_fn, rng_seed)
    return RetentionCurve(VOXEL_DSC, kind, np.asarray(grid), _voxel_curve_from_order(order, err_fp, err_fn, tp0, grid))


def _lesion_native(is_fpl: np.ndarray, order: np.ndarray) -> np.ndarray:
    n = len(is_fpl)
    n_tpl = n - int(is_fpl.sum())
    replaced_fpl = np.concatenate(([0], np.cumsum(is_fpl[order])))
    return (n_tpl + replaced_fpl) / n


def _lesion_classes(lesions: Sequence[LesionRecord]) -> np.ndarray:
    is_fpl = []
    for les in lesions:
        if les.classification not in (TPL, FPL):
            raise ValueError(f"lesion {les.lesion_id} is not classified as TPL/FPL")
        is_fpl.append(les.classification == FPL)
    return np.asarray(is_fpl, dtype=np.int64)


def _by_id(lesions: Sequence[LesionRecord]) -> list[LesionRecord]:
    return sorted(lesions, key=lambda les: les.lesion_id)


def lesion_lppv_rc(
    lesions: Sequence[LesionRecord], measure: str, grid: np.ndarray
) -> Optional[RetentionCurve]:
    """LPPV as the most uncertain lesions are counted as true positives.

    Returns None for a patient without predicted lesions.
    """
    if not lesions:
        return None
    lesions = _by_id(lesions)
    is_fpl = _lesion_classes(lesions)
    order = _descending_order([les.uncertainties[measure] for les in lesions])
    values = _interpolate(_lesion_native(is_fpl, order), np.asarray(grid))
    return RetentionCurve(LESION_LPPV, measure, np.asarray(grid), values)


def lesion_baseline(kind: str, lesions: Sequence[LesionRecord], grid, rng_seed: int = 0) -> Optional[RetentionCurve]:
    if not lesions:
        return None
    lesions = _by_id(lesions)
    is_fpl = _lesion_classes(lesions)
    if kind == IDEAL:
        order = _descending_order(is_fpl)
    elif kind == WORST:
        order = _descending_order(-is_fpl)
    elif kind == RANDOM:
        order = _descending_order(np.random.default_rng(rng_seed).random(len(lesions)))
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    values = _interpolate(_lesion_native(is_fpl, order), np.asarray(grid))
    return RetentionCurve(LESION_LPPV, kind, np.asarray(grid), values)


def _patient_native(dscs: np.ndarray, order: np.ndarray) -> np.ndarray:
    n = len(dscs)
    ranked = dscs[order]
    native = np.empty(n + 1)
    for k in range(n + 1):
        native[k] = (k + math.fsum(ranked[k:])) / n
    return native


def _sorted_patients(patients):
    rows = sorted(patients, key=lambda row: str(row[0]))
    if len(rows) < 2:
        raise ValueError("patient-scale curves need at least two patients")
    return rows


def patient_dsc_rc(patients: Sequence[tuple], grid: np.ndarray, measure: str = "") -> RetentionCurve:
    """Mean dataset DSC as the most uncertain patients get DSC 1.0.

    ``patients`` holds ``(patient_id, dsc, score)`` rows with defined values;
    callers filter out undefined scores beforehand.
    """
    rows = _sorted_patients(patients)
    dscs = np.array([r[1] for r in rows], dtype=np.float64)
    order = _descending_order([r[2] for r in rows])
    values = _interpolate(_patient_native(dscs, order), np.asarray(grid))
    return RetentionCurve(PATIENT_DSC, measure, np.asarray(grid), values)


def patient_baseline(kind: str, patients: Sequence[tuple], grid, rng_seed: int = 0) -> RetentionCurve:
    rows = _sorted_patients(patients)
    dscs = np.array([r[1] for r in rows], dtype=np.float64)
    if kind == IDEAL:
        order = _descending_order(-dscs)
    elif kind == WORST:
        order = _descending_order(dscs)
    elif kind == RANDOM:
        order = _descending_order(np.random.default_rng(rng_seed).random(len(rows)))
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    values = _interpolate(_patient_native(dscs, order), np.asarray(grid))
    return RetentionCurve(PATIENT_DSC, kind, np.asarray(grid), values)


def ideal_and_random_baselines(kind: str, *inputs, grid, rng_seed: int = 0):
    """(ideal, random) curves for one curve kind.

    ``inputs`` are ``(pred, gt, brain)`` for voxel curves, ``(lesions,)`` for
    lesion curves and ``(patients,)`` for patient curves.
    """
    builder = {VOXEL_DSC: voxel_baseline, LESION_LPPV: lesion_baseline, PATIENT_DSC: patient_baseline}[kind]
    return (
        builder(IDEAL, *inputs, grid, rng_seed=rng_seed),
        builder(RANDOM, *inputs, grid, rng_seed=rng_seed),
    )


def mean_curve(curves: Sequence[RetentionCurve]) -> RetentionCurve:
    if not curves:
        raise ValueError("no curves to average")
    first = curves[0]
    for c in curves[1:]:
        if c.kind != first.kind:
            raise ValueError(f"cannot average {first.kind} with {c.kind} curves")
        if len(c.fractions) != len(first.fractions) or not np.array_equal(c.fractions, first.fractions):
            raise ValueError("curves are on different retention grids")
    values = np.mean(np.stack([c.values for c in curves]), axis=0)
    return RetentionCurve(first.kind, first.measure, first.fractions, values)
