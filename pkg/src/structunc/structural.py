"""Lesion- and patient-scale uncertainty.

Two families are provided: averages of voxel uncertainty over a region, and
structural disagreement between the ensemble segmentation and the segmentations
of the individual members (one minus the mean member IoU), computed either per
predicted lesion (LSU) or over the whole predicted lesion volume (PSU). The
``+`` variants use member-specific thresholds instead of the ensemble one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .voxel_measures import EnsemblePrediction, VOXEL_MEASURES, voxel_uncertainties
from .volume import (
    DEFAULT_CONNECTIVITY,
    DEFAULT_MIN_LESION_VOXELS,
    LabelMap,
    as_mask,
    check_same_shape,
    iou,
    label_components,
    linear_index,
    mask_to_voxels,
    remove_small_components,
    threshold_volume,
)

LSU = "LSU"
LSU_PLUS = "LSU+"
LESION_MEASURES = (LSU, LSU_PLUS) + VOXEL_MEASURES

PSU = "PSU"
PSU_PLUS = "PSU+"
MEAN_LSU = "LSU_mean"
MEAN_LSU_PLUS = "LSU+_mean"
BRAIN_MEASURES = tuple(f"{m}_B" for m in VOXEL_MEASURES)
PATIENT_MEASURES = (PSU, PSU_PLUS, MEAN_LSU, MEAN_LSU_PLUS) + BRAIN_MEASURES

TPL = "TPL"
FPL = "FPL"
UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class ThresholdSet:
    alpha: float
    member_alphas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "member_alphas", tuple(float(a) for a in self.member_alphas))
        for a in (self.alpha,) + self.member_alphas:
            if not 0.0 < a < 1.0:
                raise ValueError(f"thresholds must lie in (0, 1), got {a}")

    @classmethod
    def shared(cls, alpha: float, n_members: int) -> "ThresholdSet":
        return cls(alpha, (alpha,) * n_members)

    def check_members(self, n_members: int) -> None:
        if len(self.member_alphas) != n_members:
            raise ValueError(
                f"{len(self.member_alphas)} member thresholds for an ensemble of {n_members}"
            )


@dataclass
class LesionRecord:
    lesion_id: int
    voxels: np.ndarray
    uncertainties: dict[str, float] = field(default_factory=dict)
    classification: str = UNASSIGNED

    @property
    def volume_voxels(self) -> int:
        return len(self.voxels)


@dataclass
class PatientUncertainty:
    """Patient-scale scores; ``None`` marks an undefined value."""

    patient_id: str
    scores: dict[str, Optional[float]] = field(default_factory=dict)


def aggregate_over_region(u: np.ndarray, region: np.ndarray) -> float:
    """Mean of a voxel map over a set of linear indices."""
    if len(region) == 0:
        raise ValueError("cannot aggregate over an empty region")
    return float(np.mean(linear_index(u)[region]))


def _member_ious(lesion: np.ndarray, member_labels: LabelMap) -> tuple[np.ndarray, np.ndarray]:
    """Labels of member components intersecting ``lesion`` and their IoUs."""
    hits = np.bincount(member_labels.flat[lesion], minlength=member_labels.count + 1)
    hits[0] = 0
    touched = np.flatnonzero(hits)
    inter = hits[touched]
    union = len(lesion) + member_labels.sizes[touched] - inter
    return touched, inter / union


def corresponding_lesion(lesion: np.ndarray, member_labels: LabelMap) -> Optional[np.ndarray]:
    """The member component with maximum IoU against ``lesion``, or None if none touch it."""
    touched, ious = _member_ious(lesion, member_labels)
    if len(touched) == 0:
        return None
    # argmax returns the first maximum, i.e. the smallest label on ties
    return member_labels.voxel_set(int(touched[np.argmax(ious)]))


def matched_iou(lesion: np.ndarray, member_labels: LabelMap) -> float:
    _, ious = _member_ious(lesion, member_labels)
    return float(ious.max()) if len(ious) else 0.0


def lsu(lesion: np.ndarray, members: Sequence[LabelMap]) -> float:
    if not members:
        raise ValueError("at least one member labeling is required")
    return 1.0 - math.fsum(matched_iou(lesion, lm) for lm in members) / len(members)


# Same formula; the member labelings are expected to come from member-specific thresholds.
lsu_plus = lsu


def psu(s: np.ndarray, member_sets: Sequence[np.ndarray]) -> float:
    if not member_sets:
        raise ValueError("at least one member voxel set is required")
    return 1.0 - math.fsum(iou(s, sm) for sm in member_sets) / len(member_sets)


psu_plus = psu


def mean_lesion_uncertainty(lesions: Sequence[LesionRecord], measure: str) -> Optional[float]:
    if not lesions:
        return None
    return math.fsum(les.uncertainties[measure] for les in lesions) / len(lesions)


def segment(
    prob: np.ndarray,
    alpha: float,
    min_voxels: int = DEFAULT_MIN_LESION_VOXELS,
    connectivity: int = DEFAULT_CONNECTIVITY,
) -> np.ndarray:
    """Threshold a probability map and drop components below ``min_voxels``."""
    return remove_small_components(threshold_volume(prob, alpha), min_voxels, connectivity)


@dataclass
class PatientMeasures:
    patient_id: str
    pred_mask: np.ndarray
    pred_labels: LabelMap
    voxel_maps: dict[str, np.ndarray]
    lesions: list[LesionRecord]
    patient: PatientUncertainty


def measure_patient(
    patient_id: str,
    ensemble: EnsemblePrediction,
    brain: np.ndarray,
    thresholds: ThresholdSet,
    *,
    min_lesion_voxels: int = DEFAULT_MIN_LESION_VOXELS,
    connectivity: int = DEFAULT_CONNECTIVITY,
    filter_member_masks: bool = False,
) -> PatientMeasures:
    """Segment with the ensemble and compute every lesion- and patient-scale measure."""
    brain = as_mask(brain, "brain mask")
    check_same_shape(ensemble.mean, brain)
    thresholds.check_members(ensemble.size)
    if not brain.any():
        raise ValueError("empty brain mask")

    pred = segment(ensemble.mean, thresholds.alpha, min_lesion_voxels, connectivity)
    pred_labels = label_components(pred, connectivity)
    voxel_maps = voxel_uncertainties(ensemble)

    def member_mask(m: int, alpha: float) -> np.ndarray:
        mask = threshold_volume(ensemble.members[m], alpha)
        if filter_member_masks:
            mask = remove_small_components(mask, min_lesion_voxels, connectivity)
        return mask

    shared = [member_mask(m, thresholds.alpha) for m in range(ensemble.size)]
    specific = [member_mask(m, a) for m, a in enumerate(thresholds.member_alphas)]
    shared_labels = [label_components(mk, connectivity) for mk in shared]
    specific_labels = [label_components(mk, connectivity) for mk in specific]

    lesions = []
    for k, vox in enumerate(pred_labels.voxel_sets, start=1):
        scores = {LSU: lsu(vox, shared_labels), LSU_PLUS: lsu_plus(vox, specific_labels)}
        for name in VOXEL_MEASURES:
            scores[name] = aggregate_over_region(voxel_maps[name], vox)
        lesions.append(LesionRecord(k, vox, scores))

    s = mask_to_voxels(pred)
    brain_vox = mask_to_voxels(brain)
    scores: dict[str, Optional[float]] = {
        PSU: psu(s, [mask_to_voxels(mk) for mk in shared]),
        PSU_PLUS: psu_plus(s, [mask_to_voxels(mk) for mk in specific]),
        MEAN_LSU: mean_lesion_uncertainty(lesions, LSU),
        MEAN_LSU_PLUS: mean_lesion_uncertainty(lesions, LSU_PLUS),
    }
    for name in VOXEL_MEASURES:
        scores[f"{name}_B"] = aggregate_over_region(voxel_maps[name], brain_vox)

    return PatientMeasures(
        patient_id=patient_id,
        pred_mask=pred,
        pred_labels=pred_labels,
        voxel_maps=voxel_maps,
        lesions=lesions,
        patient=PatientUncertainty(patient_id, scores),
    )
