"""Volumetric data model: grid geometry, weak spherical labels and cohort I/O.

A cohort on disk is a directory holding one JSON manifest plus, per subject
(session), three NIfTI-1 files and an optional JSON label sidecar::

    cohort.json
    sub-001/sub-001_angio.nii.gz
    sub-001/sub-001_brainmask.nii.gz
    sub-001/sub-001_atlas.nii.gz
    sub-001/sub-001_labels.json      # absent for control subjects

The manifest maps subject id to those paths (relative to the manifest) and
to the 16 row-major entries of the subject-to-canonical affine.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import nibabel as nib
import numpy as np

from .errors import DomainError, ValidationError

MANIFEST_FORMAT = "aneurysm-cohort/1"


@dataclass(frozen=True, eq=False)
class VolumeGeometry:
    """Shape of a voxel grid and its voxel-index to world (mm) affine."""

    shape: tuple[int, int, int]
    voxel_to_world: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ValidationError(f"shape must be 3 positive integers, got {self.shape}")
        affine = np.array(self.voxel_to_world, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValidationError(f"voxel_to_world must be 4x4, got {affine.shape}")
        if not np.all(np.isfinite(affine)) or abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise ValidationError("voxel_to_world must be finite and invertible")
        affine.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "voxel_to_world", affine)

    @classmethod
    def from_spacing(cls, shape, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        affine = np.diag([*map(float, spacing), 1.0])
        affine[:3, 3] = origin
        return cls(tuple(shape), affine)

    @property
    def spacing(self) -> np.ndarray:
        """Column norms of the linear block (mm per voxel along each index axis)."""
        return np.linalg.norm(self.voxel_to_world[:3, :3], axis=0)

    @property
    def world_to_voxel(self) -> np.ndarray:
        return np.linalg.inv(self.voxel_to_world)

    def contains(self, index) -> bool:
        idx = np.asarray(index)
        return bool(np.all(idx >= 0) and np.all(idx < np.asarray(self.shape)))

    def same_as(self, other: "VolumeGeometry", atol: float = 1e-6) -> bool:
        return self.shape == other.shape and np.allclose(
            self.voxel_to_world, other.voxel_to_world, atol=atol)

    def __eq__(self, other):
        if not isinstance(other, VolumeGeometry):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(
            self.voxel_to_world, other.voxel_to_world)

    def __repr__(self):
        return f"VolumeGeometry(shape={self.shape}, spacing={tuple(np.round(self.spacing, 4))})"


@dataclass(frozen=True, eq=False)
class Volume3D:
    geometry: VolumeGeometry
    intensities: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.intensities)
        if data.shape != self.geometry.shape:
            raise ValidationError(
                f"intensity array shape {data.shape} != geometry shape {self.geometry.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("volume intensities must be finite")
        object.__setattr__(self, "intensities", data)

    @property
    def shape(self):
        return self.geometry.shape


@dataclass(frozen=True)
class WeakLabelSphere:
    """Weak annotation: a sphere (world mm, subject space) enclosing an aneurysm."""

    center_mm: tuple[float, float, float]
    radius_mm: float
    location_tag: str | None = None

    def __post_init__(self):
        center = tuple(float(c) for c in self.center_mm)
        if len(center) != 3 or not all(math.isfinite(c) for c in center):
            raise ValidationError(f"center_mm must be 3 finite reals, got {self.center_mm}")
        if not (self.radius_mm > 0 and math.isfinite(self.radius_mm)):
            raise ValidationError(f"radius_mm must be positive, got {self.radius_mm}")
        object.__setattr__(self, "center_mm", center)
        object.__setattr__(self, "radius_mm", float(self.radius_mm))

    def to_json(self) -> dict:
        return {"center_mm": list(self.center_mm), "radius_mm": self.radius_mm,
                "location": self.location_tag}

    @classmethod
    def from_json(cls, obj: Mapping) -> "WeakLabelSphere":
        return cls(tuple(obj["center_mm"]), obj["radius_mm"], obj.get("location"))


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """One imaging session with everything the sampler needs."""

    id: str
    volume: Volume3D
    brain_mask: np.ndarray
    atlas: Volume3D
    subject_to_canonical: np.ndarray = field(default_factory=lambda: np.eye(4))
    labels: tuple[WeakLabelSphere, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "brain_mask", np.asarray(self.brain_mask).astype(bool, copy=False))
        s2c = np.array(self.subject_to_canonical, dtype=np.float64).reshape(4, 4)
        s2c.setflags(write=False)
        object.__setattr__(self, "subject_to_canonical", s2c)
        self.validate()

    @property
    def geometry(self) -> VolumeGeometry:
        return self.volume.geometry

    @property
    def is_positive(self) -> bool:
        return len(self.labels) > 0

    def validate(self) -> None:
        shape = self.volume.shape
        if self.brain_mask.shape != shape:
            raise ValidationError(
                f"{self.id}: brain mask shape {self.brain_mask.shape} != volume shape {shape}")
        if self.atlas.shape != shape:
            raise ValidationError(
                f"{self.id}: atlas shape {self.atlas.shape} != volume shape {shape}")
        if not self.atlas.geometry.same_as(self.volume.geometry):
            raise ValidationError(f"{self.id}: atlas affine differs from volume affine")
        lo, hi = float(self.atlas.intensities.min()), float(self.atlas.intensities.max())
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"{self.id}: atlas values must lie in [0, 1], got [{lo}, {hi}]")
        if not np.all(np.isfinite(self.subject_to_canonical)):
            raise ValidationError(f"{self.id}: subject_to_canonical must be finite")

    def to_canonical(self, voxel_index) -> np.ndarray:
        world = voxel_to_world(voxel_index, self.geometry)
        return _apply_affine(self.subject_to_canonical, world)


def _apply_affine(affine: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ affine[:3, :3].T + affine[:3, 3]


def voxel_to_world(index, geom: VolumeGeometry) -> np.ndarray:
    """Map an integer voxel index (or an ``(n, 3)`` array of them) to world mm."""
    idx = np.asarray(index)
    if idx.shape[-1] != 3:
        raise DomainError(f"voxel index must have 3 components, got shape {idx.shape}")
    if np.any(idx < 0) or np.any(idx >= np.asarray(geom.shape)):
        raise DomainError(f"voxel index {idx.tolist()} outside volume of shape {geom.shape}")
    return _apply_affine(geom.voxel_to_world, idx)


def world_to_voxel(point_mm, geom: VolumeGeometry) -> np.ndarray:
    """Inverse of :func:`voxel_to_world`, rounded to the nearest voxel index."""
    cont = _apply_affine(geom.world_to_voxel, point_mm)
    idx = np.rint(cont).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= np.asarray(geom.shape)):
        raise DomainError(f"point {np.asarray(point_mm).tolist()} maps outside the volume")
    return idx


def sphere_voxels(label: WeakLabelSphere, geom: VolumeGeometry) -> np.ndarray:
    """Integer indices ``(n, 3)`` of voxels whose centers lie in the closed ball.

    A ball containing no voxel center yields the single voxel containing
    the ball's center, so the result is never empty.
    """
    inv = geom.world_to_voxel
    center_vox = _apply_affine(inv, label.center_mm)
    shape = np.asarray(geom.shape)
    if np.any(center_vox < -0.5) or np.any(center_vox > shape - 0.5):
        raise DomainError(f"sphere center {label.center_mm} lies outside the volume")
    # half-extent of the ball along each index axis: r * ||row_i(inv linear)||
    reach = label.radius_mm * np.linalg.norm(inv[:3, :3], axis=1)
    lo = np.maximum(np.floor(center_vox - reach).astype(int), 0)
    hi = np.minimum(np.ceil(center_vox + reach).astype(int), shape - 1)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dist = np.linalg.norm(_apply_affine(geom.voxel_to_world, grid) - np.asarray(label.center_mm), axis=1)
    inside = grid[dist <= label.radius_mm]
    if len(inside) == 0:
        # a sub-voxel sphere still marks the voxel that contains its center
        nearest = np.clip(np.rint(center_vox).astype(int), 0, shape - 1)
        return nearest[None, :]
    return inside


def rasterize_sphere(label: WeakLabelSphere, geom: VolumeGeometry) -> np.ndarray:
    """Binary mask of the voxels whose center is within ``radius_mm`` of the label center."""
    mask = np.zeros(geom.shape, dtype=bool)
    idx = sphere_voxels(label, geom)
    mask[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return mask


def equivalent_diameter(mask: np.ndarray, geom: VolumeGeometry | None = None) -> float:
    """Diameter, in voxels, of the sphere with the same voxel count as ``mask``.

    Spacing is deliberately ignored; the statistic is reported in voxel units.
    """
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise DomainError("equivalent diameter of an empty mask is undefined")
    return (6.0 * count / math.pi) ** (1.0 / 3.0)


# --------------------------------------------------------------------------
# NIfTI / JSON persistence

def _save_nifti(data: np.ndarray, geom: VolumeGeometry, path: Path) -> None:
    img = nib.Nifti1Image(data, np.asarray(geom.voxel_to_world))
    img.header.set_data_dtype(data.dtype)
    nib.save(img, str(path))


def _load_nifti(path: Path) -> tuple[np.ndarray, VolumeGeometry]:
    if not Path(path).exists():
        raise FileNotFoundError(f"missing NIfTI file: {path}")
    img = nib.load(str(path))
    data = np.asanyarray(img.dataobj)
    return np.asarray(data), VolumeGeometry(data.shape, img.affine)


def save_subject(record: SubjectRecord, directory: str | os.PathLike,
                 relative_to: str | os.PathLike | None = None) -> dict:
    """Write one subject's files and return its manifest entry."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = Path(relative_to) if relative_to is not None else directory
    stem = directory / record.id
    paths = {
        "volume": stem.with_name(f"{record.id}_angio.nii.gz"),
        "mask": stem.with_name(f"{record.id}_brainmask.nii.gz"),
        "atlas": stem.with_name(f"{record.id}_atlas.nii.gz"),
    }
    _save_nifti(record.volume.intensities, record.geometry, paths["volume"])
    _save_nifti(record.brain_mask.astype(np.uint8), record.geometry, paths["mask"])
    _save_nifti(record.atlas.intensities, record.atlas.geometry, paths["atlas"])
    entry = {k: os.path.relpath(v, base) for k, v in paths.items()}
    if record.labels:
        label_path = stem.with_name(f"{record.id}_labels.json")
        label_path.write_text(json.dumps([lab.to_json() for lab in record.labels], indent=2))
        entry["labels"] = os.path.relpath(label_path, base)
    else:
        entry["labels"] = None
    entry["subject_to_canonical"] = [float(v) for v in record.subject_to_canonical.ravel()]
    return entry


def load_subject(subject_id: str, entry: Mapping, base_dir: str | os.PathLike = ".") -> SubjectRecord:
    """Load and validate one subject from its manifest entry."""
    base = Path(base_dir)
    vol, geom = _load_nifti(base / entry["volume"])
    mask, mask_geom = _load_nifti(base / entry["mask"])
    atlas, atlas_geom = _load_nifti(base / entry["atlas"])
    if mask.shape != vol.shape:
        raise ValidationError(
            f"{subject_id}: brain mask shape {mask.shape} != volume shape {vol.shape}")
    labels: list[WeakLabelSphere] = []
    label_file = entry.get("labels")
    if label_file:
        path = base / label_file
        if not path.exists():
            raise FileNotFoundError(f"missing label sidecar: {path}")
        labels = [WeakLabelSphere.from_json(obj) for obj in json.loads(path.read_text())]
    s2c = np.asarray(entry.get("subject_to_canonical", np.eye(4).ravel()), dtype=np.float64)
    if s2c.size != 16:
        raise ValidationError(f"{subject_id}: subject_to_canonical needs 16 entries, got {s2c.size}")
    return SubjectRecord(subject_id, Volume3D(geom, vol), mask.astype(bool),
                         Volume3D(atlas_geom, atlas), s2c.reshape(4, 4), labels)


def write_manifest(entries: Mapping[str, Mapping], path: str | os.PathLike,
                   metadata: Mapping | None = None) -> Path:
    path = Path(path)
    doc = {"format": MANIFEST_FORMAT, "metadata": dict(metadata or {}),
           "subjects": {k: dict(entries[k]) for k in sorted(entries)}}
    path.write_text(json.dumps(doc, indent=2))
    return path


def read_manifest(path: str | os.PathLike) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "cohort.json"
    if not path.exists():
        raise FileNotFoundError(f"missing cohort manifest: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != MANIFEST_FORMAT or "subjects" not in doc:
        raise ValidationError(f"{path}: not a cohort manifest")
    doc["_path"] = str(path)
    return doc


def load_cohort(path: str | os.PathLike, subject_ids: Iterable[str] | None = None) -> list[SubjectRecord]:
    """Load every subject (or the selected ones) of a cohort manifest, sorted by id."""
    doc = read_manifest(path)
    base = Path(doc["_path"]).parent
    wanted = sorted(doc["subjects"]) if subject_ids is None else list(subject_ids)
    return [load_subject(sid, doc["subjects"][sid], base) for sid in wanted]


def save_cohort(records: Sequence[SubjectRecord], out_dir: str | os.PathLike,
                metadata: Mapping | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {r.id: save_subject(r, out_dir / r.id, relative_to=out_dir) for r in records}
    return write_manifest(entries, out_dir / "cohort.json", metadata)
