"""Volume files and dataset manifests.

Two volume formats are understood:

* NIfTI-1 (``.nii`` / ``.nii.gz``), read and written through nibabel. The affine
  is carried along but never interpreted.
* A minimal raw format (``.vol``): a 20-byte little-endian header
  ``b"SUV1"``, a uint8 dtype code, three pad bytes, and uint32 ``nx, ny, nz``,
  followed by the voxels in x-fastest order (row-major over ``z, y, x``).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import nibabel as nib
import numpy as np

from .volume import GridShape

RAW_MAGIC = b"SUV1"
RAW_HEADER = struct.Struct("<4sB3xIII")
RAW_DTYPES = {1: np.dtype("<u1"), 2: np.dtype("<i2"), 3: np.dtype("<i4"), 4: np.dtype("<f4"), 5: np.dtype("<f8")}
RAW_CODES = {dt: code for code, dt in RAW_DTYPES.items()}

PROBABILITY = "probability"
MASK = "mask"
ANY = "any"


class VolumeFormatError(ValueError):
    """A volume file could not be decoded or has unexpected content."""


def _is_nifti(path: Path) -> bool:
    name = path.name.lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def _read_raw(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < RAW_HEADER.size:
        raise VolumeFormatError(f"{path}: truncated header")
    magic, code, nx, ny, nz = RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")
    if code not in RAW_DTYPES:
        raise VolumeFormatError(f"{path}: unknown dtype code {code}")
    dtype = RAW_DTYPES[code]
    n = nx * ny * nz
    if n == 0:
        raise VolumeFormatError(f"{path}: zero-sized grid")
    payload = blob[RAW_HEADER.size :]
    if len(payload) != n * dtype.itemsize:
        raise VolumeFormatError(f"{path}: expected {n * dtype.itemsize} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz), order="F").astype(dtype.newbyteorder("="))


def _write_raw(path: Path, data: np.ndarray) -> None:
    dtype = data.dtype.newbyteorder("<")
    if data.dtype == bool:
        data, dtype = data.astype(np.uint8), np.dtype("<u1")
    if dtype not in RAW_CODES:
        raise VolumeFormatError(f"dtype {data.dtype} cannot be stored in the raw format")
    header = RAW_HEADER.pack(RAW_MAGIC, RAW_CODES[dtype], *data.shape)
    path.write_bytes(header + np.asarray(data, dtype=dtype).tobytes(order="F"))


def _read_nifti(path: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        img = nib.load(str(path))
    except Exception as exc:  # nibabel raises a zoo of exception types
        raise VolumeFormatError(f"{path}: {exc}") from exc
    if not isinstance(img, (nib.Nifti1Image, nib.Nifti2Image)):
        raise VolumeFormatError(f"{path}: not a NIfTI image")
    data = np.asanyarray(img.dataobj)
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise VolumeFormatError(f"{path}: expected a 3D volume, got shape {data.shape}")
    return data, img.affine


def load_volume(path, kind: str = ANY) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Read a volume and its affine (None for raw files), validating content for ``kind``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if _is_nifti(path):
        data, affine = _read_nifti(path)
    else:
        data, affine = _read_raw(path), None
    if kind == MASK:
        if not np.isin(data, (0, 1)).all():
            raise VolumeFormatError(f"{path}: non-binary mask")
        data = data.astype(bool)
    elif kind == PROBABILITY:
        data = data.astype(np.float64)
        if not np.isfinite(data).all():
            raise VolumeFormatError(f"{path}: NaN or Inf in probability volume")
        if data.min() < 0.0 or data.max() > 1.0:
            raise VolumeFormatError(f"{path}: probability values outside [0, 1]")
    elif kind != ANY:
        raise ValueError(f"unknown volume kind {kind!r}")
    return data, affine


def read_volume(path, kind: str = ANY) -> np.ndarray:
    return load_volume(path, kind)[0]


def write_volume(path, data: np.ndarray, affine: Optional[np.ndarray] = None) -> Path:
    path = Path(path)
    data = np.asarray(data)
    GridShape.of(data)
    path.parent.mkdir(parents=True, exist_ok=True)
    if _is_nifti(path):
        if data.dtype == bool:
            data = data.astype(np.uint8)
        img = nib.Nifti1Image(data, np.eye(4) if affine is None else affine)
        img.header.set_data_dtype(data.dtype)
        nib.save(img, str(path))
    else:
        _write_raw(path, data)
    return path


@dataclass
class PatientEntry:
    patient_id: str
    members: list[Path]
    ground_truth: Path
    brain_mask: Path


@dataclass
class DatasetManifest:
    """JSON manifest; relative paths resolve against the manifest's directory."""

    dataset_id: str
    patients: list[PatientEntry]
    domain_tag: str = ""
    root: Path = field(default_factory=Path)

    @property
    def n_members(self) -> int:
        return len(self.patients[0].members) if self.patients else 0

    def validate(self, check_files: bool = True) -> None:
        if not self.patients:
            raise ValueError(f"manifest {self.dataset_id!r} lists no patients")
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate patient ids in manifest")
        counts = {len(p.members) for p in self.patients}
        if len(counts) != 1:
            raise ValueError(f"patients disagree on member count: {sorted(counts)}")
        if min(counts) < 1:
            raise ValueError("each patient needs at least one member probability map")
        if check_files:
            for p in self.patients:
                for f in [*p.members, p.ground_truth, p.brain_mask]:
                    if not f.exists():
                        raise FileNotFoundError(f"patient {p.patient_id}: missing {f}")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        raw = json.loads(path.read_text())
        root = path.parent

        def resolve(p: str) -> Path:
            q = Path(p)
            return q if q.is_absolute() else root / q

        patients = [
            PatientEntry(
                patient_id=str(p["patient_id"]),
                members=[resolve(m) for m in p["members"]],
                ground_truth=resolve(p["ground_truth"]),
                brain_mask=resolve(p["brain_mask"]),
            )
            for p in raw.get("patients", [])
        ]
        return cls(str(raw.get("dataset_id", path.stem)), patients, str(raw.get("domain_tag", "")), root)

    def to_dict(self) -> dict:
        def rel(p: Path) -> str:
            try:
                return str(p.relative_to(self.root))
            except ValueError:
                return str(p)

        return {
            "dataset_id": self.dataset_id,
            "domain_tag": self.domain_tag,
            "patients": [
                {
                    "patient_id": p.patient_id,
                    "members": [rel(m) for m in p.members],
                    "ground_truth": rel(p.ground_truth),
                    "brain_mask": rel(p.brain_mask),
                }
                for p in self.patients
            ],
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path
