"""Synthetic ensemble phantoms with a known error taxonomy.

A phantom is a ball-shaped brain holding spherical ground-truth lesions. Each
ensemble member sees every lesion with a soft border whose radius is jittered
per member. Member dropout makes some members miss a lesion. Injected false
positives are blobs that only a few members predict confidently while the
others sit just below the decision threshold. Everything placed is written
to a truth ledger.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .io import DatasetManifest, PatientEntry, write_volume
from .voxel_measures import EnsemblePrediction


class PhantomPackingError(ValueError):
    """Requested lesions do not fit into the phantom brain."""


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (48, 48, 48)
    n_lesions: int = 5
    lesion_radius_range: tuple[float, float] = (2.5, 4.0)
    member_count: int = 5
    border_jitter: float = 0.0
    fp_injection_rate: float = 0.0
    member_dropout_rate: float = 0.0
    seed: int = 0
    # members that predict an injected false positive above threshold
    fp_support: int = 1
    # members omitting a lesion marked for dropout
    dropout_members: int = 1
    softness: float = 0.5
    lesion_prob: float = 0.95
    background_prob: float = 0.02
    fp_subthreshold_prob: float = 0.45
    member_noise: float = 0.0
    max_tries: int = 2000

    def __post_init__(self):
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ValueError(f"invalid phantom shape {self.shape}")
        lo, hi = self.lesion_radius_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid lesion radius range {self.lesion_radius_range}")
        for name in ("fp_injection_rate", "member_dropout_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.member_count < 1 or self.n_lesions < 0:
            raise ValueError("member_count must be >= 1 and n_lesions >= 0")
        if not 0 <= self.fp_support <= self.member_count:
            raise ValueError("fp_support must lie in [0, member_count]")
        if not 0 <= self.dropout_members <= self.member_count:
            raise ValueError("dropout_members must lie in [0, member_count]")
        if self.border_jitter < 0 or self.softness < 0 or self.member_noise < 0:
            raise ValueError("border_jitter, softness and member_noise must be non-negative")

    @property
    def n_false_positives(self) -> int:
        return int(round(self.fp_injection_rate * self.n_lesions))


@dataclass
class Phantom:
    ensemble: EnsemblePrediction
    gt: np.ndarray
    brain: np.ndarray
    ledger: dict = field(default_factory=dict)


def _coords(shape):
    return np.stack(np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij"))


def _distance(coords: np.ndarray, center: Sequence[float]) -> np.ndarray:
    c = np.asarray(center, dtype=np.float64).reshape(3, 1, 1, 1)
    return np.sqrt(((coords - c) ** 2).sum(axis=0))


def _profile(dist: np.ndarray, radius: float, softness: float) -> np.ndarray:
    if softness == 0:
        return (dist <= radius).astype(np.float64)
    return expit((radius - dist) / softness)


def _place_blobs(rng, spec: PhantomSpec, n: int, brain_center, brain_radius, taken: list):
    margin = 2.0 * spec.border_jitter + 2.0 + 2.0 * spec.softness
    lo, hi = spec.lesion_radius_range
    placed = []
    for _ in range(n):
        for _ in range(spec.max_tries):
            r = float(rng.uniform(lo, hi))
            reach = brain_radius - r - spec.border_jitter - 1.0
            if reach <= 0:
                continue
            offset = rng.uniform(-reach, reach, size=3)
            if np.linalg.norm(offset) > reach:
                continue
            c = tuple(float(v) for v in np.asarray(brain_center) + offset)
            if all(math.dist(c, c2) >= r + r2 + margin for c2, r2 in taken):
                taken.append((c, r))
                placed.append((c, r))
                break
        else:
            raise PhantomPackingError(
                f"could not place {n} blobs of radius {spec.lesion_radius_range} in a {spec.shape} phantom"
            )
    return placed


def generate_phantom(spec: PhantomSpec) -> Phantom:
    """Build an ensemble, ground truth, brain mask and truth ledger from ``spec``."""
    rng = np.random.default_rng(spec.seed)
    shape = tuple(int(n) for n in spec.shape)
    coords = _coords(shape)
    brain_center = [(n - 1) / 2.0 for n in shape]
    brain_radius = 0.45 * min(shape)
    brain = _distance(coords, brain_center) <= brain_radius

    taken: list = []
    lesions = _place_blobs(rng, spec, spec.n_lesions, brain_center, brain_radius, taken)
    fps = _place_blobs(rng, spec, spec.n_false_positives, brain_center, brain_radius, taken)

    M = spec.member_count
    gt = np.zeros(shape, dtype=bool)
    members = np.full((M,) + shape, spec.background_prob, dtype=np.float64)
    ledger = {"spec": asdict(spec), "lesions": [], "false_positives": []}

    for k, (c, r) in enumerate(lesions, start=1):
        dist = _distance(coords, c)
        gt |= dist <= r
        dropped: list[int] = []
        if spec.dropout_members and rng.random() < spec.member_dropout_rate:
            dropped = sorted(int(m) for m in rng.choice(M, size=spec.dropout_members, replace=False))
        jitter = rng.uniform(-spec.border_jitter, spec.border_jitter, size=M) if spec.border_jitter else np.zeros(M)
        for m in range(M):
            if m in dropped:
                continue
            level = spec.background_prob + (spec.lesion_prob - spec.background_prob) * _profile(
                dist, r + jitter[m], spec.softness
            )
            np.maximum(members[m], level, out=members[m])
        ledger["lesions"].append(
            {"id": k, "center": list(c), "radius": r, "dropped_by": dropped, "jitter": [float(j) for j in jitter]}
        )

    for k, (c, r) in enumerate(fps, start=1):
        dist = _distance(coords, c)
        supporters = sorted(int(m) for m in rng.choice(M, size=spec.fp_support, replace=False))
        for m in range(M):
            peak = spec.lesion_prob if m in supporters else spec.fp_subthreshold_prob
            level = spec.background_prob + (peak - spec.background_prob) * _profile(dist, r, spec.softness)
            np.maximum(members[m], level, out=members[m])
        ledger["false_positives"].append({"id": k, "center": list(c), "radius": r, "supporters": supporters})

    if spec.member_noise:
        members += rng.uniform(0.0, spec.member_noise, size=members.shape)
        np.clip(members, 0.0, 1.0, out=members)

    return Phantom(EnsemblePrediction(members), gt, brain, ledger)


def corrupted_spec(base: PhantomSpec, level: float, seed: int, **scale) -> PhantomSpec:
    """Scale the error knobs of ``base`` by ``level`` in [0, 1].

    ``scale`` gives the value each knob reaches at level 1, e.g.
    ``border_jitter=2.0, fp_injection_rate=1.0``.
    """
    changes = {name: level * top for name, top in scale.items()}
    return replace(base, seed=seed, **changes)


def phantom_suite(
    n_patients: int,
    base: PhantomSpec = PhantomSpec(),
    seed: int = 0,
    levels: Optional[Sequence[float]] = None,
    vary: Optional[dict] = None,
    **scale,
) -> list[tuple[str, Phantom]]:
    """A deterministic list of ``(patient_id, Phantom)`` with varying corruption.

    Corruption levels default to an even spread over [0, 1]; ``scale`` maps
    each error knob to its value at level 1 (see :func:`corrupted_spec`).
    ``vary`` maps other spec fields to ``(lo, hi)`` ranges drawn uniformly per
    patient, independently of the corruption level (integers when both
    bounds are ints).
    """
    rng = np.random.default_rng(seed)
    if levels is None:
        levels = np.linspace(0.0, 1.0, n_patients) if n_patients > 1 else [0.0] * n_patients
    if len(levels) != n_patients:
        raise ValueError(f"{len(levels)} corruption levels for {n_patients} patients")
    out = []
    for i, level in enumerate(levels):
        spec = corrupted_spec(base, float(level), seed=int(rng.integers(2**31)), **scale)
        draws = {}
        for name, (lo, hi) in sorted((vary or {}).items()):
            if isinstance(lo, int) and isinstance(hi, int):
                draws[name] = int(rng.integers(lo, hi + 1))
            else:
                draws[name] = float(rng.uniform(lo, hi))
        out.append((f"P{i:03d}", generate_phantom(replace(spec, **draws))))
    return out


def write_phantom_dataset(
    out_dir,
    phantoms: Sequence[tuple[str, Phantom]],
    dataset_id: str = "phantom",
    domain_tag: str = "in",
    suffix: str = ".nii.gz",
) -> DatasetManifest:
    out_dir = Path(out_dir)
    entries = []
    for pid, ph in phantoms:
        pdir = out_dir / pid
        members = [write_volume(pdir / f"member{m}{suffix}", p.astype(np.float32)) for m, p in enumerate(ph.ensemble.members)]
        gt = write_volume(pdir / f"gt{suffix}", ph.gt.astype(np.uint8))
        brain = write_volume(pdir / f"brain{suffix}", ph.brain.astype(np.uint8))
        entries.append(PatientEntry(pid, members, gt, brain))
    manifest = DatasetManifest(dataset_id, entries, domain_tag, out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
