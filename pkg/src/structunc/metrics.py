"""Voxel- and lesion-scale segmentation quality metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .structural import FPL, TPL
from .volume import LabelMap, as_mask, check_same_shape

DEFAULT_TPL_IOU = 0.25
DEFAULT_NDSC_R = 0.001


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class LesionCounts:
    n_tpl: int
    n_fpl: int
    n_fnl: int


def _ratio(num: float, den: float) -> float:
    # 0/0 is read as vacuous agreement
    return 1.0 if den == 0 else num / den


def confusion(pred: np.ndarray, gt: np.ndarray, brain: np.ndarray) -> ConfusionCounts:
    """Voxel confusion counts restricted to the brain mask."""
    pred, gt, brain = as_mask(pred, "prediction"), as_mask(gt, "ground truth"), as_mask(brain, "brain mask")
    check_same_shape(pred, gt, brain)
    n_brain = int(brain.sum())
    if n_brain == 0:
        raise ValueError("empty brain mask")
    p, g = pred[brain], gt[brain]
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, n_brain - tp - fp - fn)


def tpr(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def ppv(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def dsc(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def ndsc(c: ConfusionCounts, r: float = DEFAULT_NDSC_R, gt_pos: int = None, gt_neg: int = None) -> Optional[float]:
    """Normalized Dice: false positives reweighted by ``h * (1/r - 1)``.

    ``h`` is the subject's ground-truth positive:negative ratio. When the
    counts are not given they are taken from ``c``. Returns None for subjects
    without any positive voxels.
    """
    if not 0.0 < r < 1.0:
        raise ValueError(f"reference rate must lie in (0, 1), got {r}")
    if gt_pos is None:
        gt_pos = c.tp + c.fn
    if gt_neg is None:
        gt_neg = c.fp + c.tn
    if gt_pos == 0 or gt_neg == 0:
        return None
    kappa = (gt_pos / gt_neg) * (1.0 / r - 1.0)
    return 2 * c.tp / (2 * c.tp + kappa * c.fp + c.fn)


def classify_lesions(
    pred_labels: LabelMap, gt_labels: LabelMap, tpl_iou: float = DEFAULT_TPL_IOU
) -> tuple[list[str], LesionCounts]:
    """Label predicted lesions TPL/FPL and count ground-truth lesions missed entirely.

    A predicted lesion is a TPL when its best IoU with any ground-truth
    component reaches ``tpl_iou``. A ground-truth lesion is a FNL when no
    predicted voxel touches it.
    """
    check_same_shape(pred_labels.labels, gt_labels.labels)
    classes = []
    for vox in pred_labels.voxel_sets:
        hits = np.bincount(gt_labels.flat[vox], minlength=gt_labels.count + 1)
        hits[0] = 0
        touched = np.flatnonzero(hits)
        best = 0.0
        if len(touched):
            inter = hits[touched]
            best = float((inter / (len(vox) + gt_labels.sizes[touched] - inter)).max())
        classes.append(TPL if best >= tpl_iou else FPL)

    covered = np.bincount(gt_labels.flat[pred_labels.flat > 0], minlength=gt_labels.count + 1)
    n_fnl = int(np.count_nonzero(covered[1:] == 0))
    n_tpl = classes.count(TPL)
    return classes, LesionCounts(n_tpl, len(classes) - n_tpl, n_fnl)


def lesion_metrics(lc: LesionCounts) -> tuple[float, float, float]:
    """(LTPR, LPPV, LF1) with 0/0 taken as 1."""
    ltpr = _ratio(lc.n_tpl, lc.n_tpl + lc.n_fnl)
    lppv = _ratio(lc.n_tpl, lc.n_tpl + lc.n_fpl)
    lf1 = _ratio(2 * lc.n_tpl, 2 * lc.n_tpl + lc.n_fpl + lc.n_fnl)
    return ltpr, lppv, lf1
