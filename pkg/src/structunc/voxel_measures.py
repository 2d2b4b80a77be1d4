"""Voxel-scale uncertainty of a deep ensemble for binary segmentation.

All entropies use the natural logarithm, with ``0 * log 0 = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .volume import GridShape, validate_probability

NC = "NC"
EOE = "EoE"
EXE = "ExE"
MI = "MI"
VOXEL_MEASURES = (NC, EOE, EXE, MI)


@dataclass(frozen=True, eq=False)
class EnsemblePrediction:
    """Per-member foreground probabilities stacked as ``(M, nx, ny, nz)``."""

    members: np.ndarray
    mean: np.ndarray = field(init=False)

    def __post_init__(self):
        members = np.asarray(self.members, dtype=np.float64)
        if members.ndim != 4 or members.shape[0] < 1:
            raise ValueError(f"expected members shaped (M, nx, ny, nz), got {members.shape}")
        for m, p in enumerate(members):
            validate_probability(p, name=f"member {m}")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "mean", member_mean(members))

    @classmethod
    def from_members(cls, members) -> "EnsemblePrediction":
        return cls(np.stack([np.asarray(p, dtype=np.float64) for p in members]))

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.mean)


def member_mean(values: np.ndarray) -> np.ndarray:
    """Mean over the member axis, bit-identical under member permutation.

    Averaging offsets from the smallest member keeps the mean of identical
    members exactly equal to their common value.
    """
    s = np.sort(values, axis=0)
    return np.minimum(s[0] + (s - s[0]).mean(axis=0), s[-1])


def binary_entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))


def negated_confidence(e: EnsemblePrediction) -> np.ndarray:
    return -np.maximum(e.mean, 1.0 - e.mean)


def entropy_of_expected(e: EnsemblePrediction) -> np.ndarray:
    return binary_entropy(e.mean)


def expected_entropy(e: EnsemblePrediction) -> np.ndarray:
    return member_mean(binary_entropy(e.members))


def mutual_information(e: EnsemblePrediction) -> np.ndarray:
    return np.maximum(entropy_of_expected(e) - expected_entropy(e), 0.0)


def voxel_uncertainties(e: EnsemblePrediction) -> dict[str, np.ndarray]:
    """All four voxel maps, sharing the entropy computations."""
    eoe = entropy_of_expected(e)
    exe = expected_entropy(e)
    return {
        NC: negated_confidence(e),
        EOE: eoe,
        EXE: exe,
        MI: np.maximum(eoe - exe, 0.0),
    }
