"""Threshold selection by validation-set mean Dice."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import confusion, dsc
from .structural import segment
from .volume import DEFAULT_CONNECTIVITY, DEFAULT_MIN_LESION_VOXELS

DEFAULT_CANDIDATES = tuple(float(c) for c in np.arange(1, 20) / 20)


@dataclass(frozen=True)
class ThresholdSweepResult:
    candidates: tuple[float, ...]
    mean_dsc: tuple[float, ...]
    best: float

    @property
    def best_dsc(self) -> float:
        return self.mean_dsc[self.candidates.index(self.best)]

    def rows(self) -> list[dict]:
        return [{"threshold": c, "mean_dsc": d} for c, d in zip(self.candidates, self.mean_dsc)]


def sweep_probabilities(
    probs: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    brains: Sequence[np.ndarray],
    candidates: Sequence[float] = DEFAULT_CANDIDATES,
    *,
    min_lesion_voxels: int = DEFAULT_MIN_LESION_VOXELS,
    connectivity: int = DEFAULT_CONNECTIVITY,
) -> ThresholdSweepResult:
    """Mean Dice of the post-processed segmentation for each candidate threshold.

    The best candidate is the smallest one reaching the maximum mean Dice.
    """
    if not probs:
        raise ValueError("validation set is empty")
    candidates = tuple(sorted(float(c) for c in candidates))
    if not candidates:
        raise ValueError("no candidate thresholds")
    means = []
    for c in candidates:
        scores = [
            dsc(confusion(segment(p, c, min_lesion_voxels, connectivity), g, b))
            for p, g, b in zip(probs, gts, brains)
        ]
        means.append(math.fsum(scores) / len(scores))
    best_i = int(np.argmax(means))
    return ThresholdSweepResult(candidates, tuple(means), candidates[best_i])


def tune_alpha(val_set, candidates: Sequence[float] = DEFAULT_CANDIDATES, **kwargs) -> ThresholdSweepResult:
    """Sweep the ensemble-mean threshold over ``(EnsemblePrediction, gt, brain)`` triples."""
    return sweep_probabilities(
        [e.mean for e, _, _ in val_set],
        [g for _, g, _ in val_set],
        [b for _, _, b in val_set],
        candidates,
        **kwargs,
    )


def tune_member_alphas(
    val_set, candidates: Sequence[float] = DEFAULT_CANDIDATES, **kwargs
) -> list[ThresholdSweepResult]:
    """One independent sweep per ensemble member."""
    sizes = {e.size for e, _, _ in val_set}
    if len(sizes) != 1:
        raise ValueError(f"validation patients disagree on ensemble size: {sorted(sizes)}")
    (n_members,) = sizes
    gts = [g for _, g, _ in val_set]
    brains = [b for _, _, b in val_set]
    return [
        sweep_probabilities([e.members[m] for e, _, _ in val_set], gts, brains, candidates, **kwargs)
        for m in range(n_members)
    ]
