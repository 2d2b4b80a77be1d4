"""3D grid primitives: thresholding, connected components, IoU, small-component removal.

Volumes are numpy arrays indexed ``[x, y, z]``. Linear voxel indices follow the
x-fastest convention ``index = x + nx * (y + ny * z)``, which is numpy's Fortran
order for such arrays (and the on-disk order of NIfTI data).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import ndimage

DEFAULT_CONNECTIVITY = 26
DEFAULT_MIN_LESION_VOXELS = 10

_CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}


class GridShape(NamedTuple):
    nx: int
    ny: int
    nz: int

    @classmethod
    def of(cls, array: np.ndarray) -> "GridShape":
        if array.ndim != 3:
            raise ValueError(f"expected a 3D volume, got shape {array.shape}")
        shape = cls(*(int(s) for s in array.shape))
        if min(shape) < 1:
            raise ValueError(f"grid extents must be >= 1, got {tuple(shape)}")
        return shape

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz


def validate_probability(p: np.ndarray, name: str = "probability volume") -> np.ndarray:
    """Return ``p`` as float64 after checking it is a finite 3D field in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    GridShape.of(p)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} contains NaN or Inf")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError(f"{name} has values outside [0, 1]")
    return p


def as_mask(m: np.ndarray, name: str = "mask") -> np.ndarray:
    m = np.asarray(m)
    GridShape.of(m)
    if m.dtype != bool:
        if not np.isin(m, (0, 1)).all():
            raise ValueError(f"non-binary {name}: values other than 0/1 present")
        m = m.astype(bool)
    return m


def check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def linear_index(array: np.ndarray) -> np.ndarray:
    """Flatten in x-fastest order (the canonical linear voxel order)."""
    return np.ravel(array, order="F")


def threshold_volume(p: np.ndarray, alpha: float) -> np.ndarray:
    """Binary mask of voxels with probability strictly greater than ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {alpha}")
    p = np.asarray(p, dtype=np.float64)
    if np.isnan(p).any():
        raise ValueError("probability volume contains NaN")
    return p > alpha


def structuring_element(connectivity: int) -> np.ndarray:
    try:
        rank = _CONNECTIVITY_RANK[connectivity]
    except KeyError:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}") from None
    return ndimage.generate_binary_structure(3, rank)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Connected components of a binary mask.

    ``labels`` holds 0 for background and 1..count for components, numbered by
    ascending minimum linear voxel index.
    """

    labels: np.ndarray
    count: int

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.labels)

    @property
    def mask(self) -> np.ndarray:
        return self.labels > 0

    @cached_property
    def flat(self) -> np.ndarray:
        return linear_index(self.labels)

    @cached_property
    def sizes(self) -> np.ndarray:
        """Voxel count per label; ``sizes[0]`` is the background count."""
        return np.bincount(self.flat, minlength=self.count + 1)

    @cached_property
    def voxel_sets(self) -> list[np.ndarray]:
        """Sorted linear indices of each component, in label order (1..count)."""
        order = np.argsort(self.flat, kind="stable")
        bounds = np.cumsum(self.sizes)
        return [order[bounds[k - 1] : bounds[k]] for k in range(1, self.count + 1)]

    def voxel_set(self, label: int) -> np.ndarray:
        return self.voxel_sets[label - 1]


def label_components(mask: np.ndarray, connectivity: int = DEFAULT_CONNECTIVITY) -> LabelMap:
    mask = as_mask(mask)
    raw, count = ndimage.label(mask, structure=structuring_element(connectivity))
    if count == 0:
        return LabelMap(raw.astype(np.int32), 0)
    flat = linear_index(raw)
    # first occurrence in x-fastest order == minimum linear index of each label
    present, first = np.unique(flat, return_index=True)
    if present[0] == 0:
        present, first = present[1:], first[1:]
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[present[np.argsort(first)]] = np.arange(1, count + 1, dtype=np.int32)
    return LabelMap(remap[raw], int(count))


def remove_small_components(
    mask: np.ndarray,
    min_voxels: int = DEFAULT_MIN_LESION_VOXELS,
    connectivity: int = DEFAULT_CONNECTIVITY,
) -> np.ndarray:
    """Drop every connected component with fewer than ``min_voxels`` voxels."""
    if min_voxels < 0:
        raise ValueError("min_voxels must be non-negative")
    mask = as_mask(mask)
    if min_voxels <= 1:
        return mask.copy()
    lm = label_components(mask, connectivity)
    keep = lm.sizes >= min_voxels
    keep[0] = False
    return keep[lm.labels]


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two sorted, duplicate-free index sets.

    Two empty sets are treated as identical (IoU 1).
    """
    na, nb = len(a), len(b)
    if na == 0 and nb == 0:
        return 1.0
    inter = len(np.intersect1d(a, b, assume_unique=True))
    return inter / (na + nb - inter)


def mask_to_voxels(mask: np.ndarray) -> np.ndarray:
    return np.flatnonzero(linear_index(as_mask(mask)))
