"""Synthetic vascular phantoms standing in for the clinical TOF-MRA cohort.

Each phantom is a noisy volume containing bright tubes that follow a fixed
arterial tree routed through the landmark points, a few random distractor
tubes, and zero or more spherical bulges (aneurysms) attached to the tree
next to a landmark. The atlas is the noiseless map of the shared arterial
tree only, without the subject's own distractor tubes and without the bulges,
so it plays the role of a co-registered population vessel atlas.

Phantoms live directly in canonical space: ``subject_to_canonical`` is the
identity and the volume is centered on the origin.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import GenerationError, ValidationError
from .features import LandmarkSet, default_landmarks
from .seeding import derive_seed
from .volumes import (SubjectRecord, Volume3D, VolumeGeometry, WeakLabelSphere,
                      save_subject, write_manifest)

log = logging.getLogger(__name__)

#: Aneurysm counts per location in the reference cohort (111 aneurysms).
LOCATION_COUNTS = {
    "MCA": 22,
    "ACOM": 20,
    "Intradural carotid other": 13,
    "Carotid extra": 13,
    "MC other": 8,
    "Carotid tip": 8,
    "Pericallosal": 8,
    "PCOM": 7,
    "Basilar tip": 5,
    "Ophthalmic": 4,
    "Post other": 3,
}
DEFAULT_LOCATION_WEIGHTS = {k: v / 111 for k, v in LOCATION_COUNTS.items()}

# Polylines of the arterial tree: landmark names or literal canonical points (mm).
ARTERIAL_TREE: tuple[tuple, ...] = (
    ((-20.0, 4.0, -64.0), "carotid_extra_L", "ophthalmic_L", "carotid_intradural_L", "pcom_L", "carotid_tip_L"),
    ((20.0, 4.0, -64.0), "carotid_extra_R", "ophthalmic_R", "carotid_intradural_R", "pcom_R", "carotid_tip_R"),
    ("carotid_tip_L", "mca_bifurcation_L", "mca_distal_posterior_L", (-50.0, -8.0, 26.0)),
    ("carotid_tip_R", "mca_bifurcation_R", "mca_distal_posterior_R", (50.0, -8.0, 26.0)),
    ("mca_bifurcation_L", "mca_distal_anterior_L", (-40.0, 32.0, 28.0)),
    ("mca_bifurcation_R", "mca_distal_anterior_R", (40.0, 32.0, 28.0)),
    ("carotid_tip_L", "acom", "carotid_tip_R"),
    ("acom", "pericallosal_genu", "pericallosal_body", (0.0, -10.0, 42.0)),
    ((0.0, -20.0, -64.0), "vertebrobasilar_junction", "basilar_trunk", "basilar_tip", "pca_L", (-30.0, -44.0, 8.0)),
    ("basilar_tip", "pca_R", (30.0, -44.0, 8.0)),
    ("pcom_L", "pca_L"),
    ("pcom_R", "pca_R"),
)

BRAIN_SEMI_AXES_MM = (52.0, 56.0, 48.0)


@dataclass(frozen=True)
class PhantomSpec:
    """Appearance and geometry of one synthetic subject.

    ``aneurysm_diameter_range_vox`` is sampled log-uniformly; the label sphere
    adds ``label_margin_vox`` (uniform) around the bulge.
    """

    volume_shape: tuple[int, int, int] = (128, 128, 128)
    voxel_size_mm: float = 1.0
    n_vessel_segments: int = 8
    vessel_radius_range: tuple[float, float] = (1.2, 2.4)
    vessel_intensity: float = 1.0
    tissue_intensity: float = 0.25
    background_noise_sigma: float = 0.06
    intensity_scale_range: tuple[float, float] = (0.8, 1.25)
    aneurysm_diameter_range_vox: tuple[float, float] = (3.0, 16.0)
    label_margin_vox: tuple[float, float] = (1.0, 2.5)
    brain_semi_axes_mm: tuple[float, float, float] = BRAIN_SEMI_AXES_MM
    landmark_placement_weights: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_LOCATION_WEIGHTS))
    small_patch_side: int = 30

    def __post_init__(self):
        total = sum(self.landmark_placement_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"landmark placement weights must sum to 1, got {total}")
        if any(w < 0 for w in self.landmark_placement_weights.values()):
            raise ValidationError("landmark placement weights must be non-negative")
        lo, hi = self.aneurysm_diameter_range_vox
        if not (2.0 <= lo <= hi <= 0.92 * self.small_patch_side):
            raise ValidationError(
                f"aneurysm diameters must lie within [2, {0.92 * self.small_patch_side:g}] voxels, "
                f"got ({lo}, {hi})")
        if self.label_margin_vox[0] < 1.0 or self.label_margin_vox[1] < self.label_margin_vox[0]:
            raise ValidationError("label margin must be >= 1 voxel")
        if min(self.volume_shape) < 1 or self.voxel_size_mm <= 0:
            raise ValidationError("volume shape and voxel size must be positive")
        if self.vessel_radius_range[0] <= 0 or self.vessel_radius_range[1] < self.vessel_radius_range[0]:
            raise ValidationError("invalid vessel radius range")
        if self.background_noise_sigma < 0:
            raise ValidationError("noise sigma must be non-negative")

    @property
    def geometry(self) -> VolumeGeometry:
        shape = np.asarray(self.volume_shape)
        origin = -(shape - 1) / 2.0 * self.voxel_size_mm
        return VolumeGeometry.from_spacing(self.volume_shape, (self.voxel_size_mm,) * 3, origin)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["landmark_placement_weights"] = dict(self.landmark_placement_weights)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "PhantomSpec":
        kw = dict(doc)
        for key in ("volume_shape", "vessel_radius_range", "intensity_scale_range",
                    "aneurysm_diameter_range_vox", "label_margin_vox", "brain_semi_axes_mm"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    @classmethod
    def quick(cls) -> "PhantomSpec":
        """Low-resolution phantom (1.75 mm voxels) paired with 12/24-voxel patches."""
        return cls(volume_shape=(72, 72, 72), voxel_size_mm=1.75, n_vessel_segments=8,
                   vessel_radius_range=(2.2, 3.4), aneurysm_diameter_range_vox=(3.0, 6.0),
                   label_margin_vox=(1.0, 1.5), small_patch_side=12)


@dataclass(frozen=True)
class CohortSpec:
    n_subjects: int = 40
    prevalence: float = 83 / 214
    p_single_aneurysm: float = 0.81
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValidationError(f"n_subjects must be >= 1, got {self.n_subjects}")
        if not (0.0 < self.prevalence <= 1.0):
            raise ValidationError(f"prevalence must lie in (0, 1], got {self.prevalence}")
        if not (0.0 <= self.p_single_aneurysm <= 1.0):
            raise ValidationError("p_single_aneurysm must lie in [0, 1]")

    @property
    def n_positive(self) -> int:
        """Number of positive subjects: ``prevalence * n_subjects`` rounded half up."""
        return min(self.n_subjects, int(math.floor(self.prevalence * self.n_subjects + 0.5)))


# --------------------------------------------------------------------------
# rasterization helpers (world coordinates, soft one-voxel edge)

def _region(geom: VolumeGeometry, lo_mm, hi_mm):
    inv = geom.world_to_voxel
    corners = np.array([[x, y, z] for x in (lo_mm[0], hi_mm[0])
                        for y in (lo_mm[1], hi_mm[1]) for z in (lo_mm[2], hi_mm[2])])
    vox = corners @ inv[:3, :3].T + inv[:3, 3]
    lo = np.maximum(np.floor(vox.min(axis=0)).astype(int), 0)
    hi = np.minimum(np.ceil(vox.max(axis=0)).astype(int), np.asarray(geom.shape) - 1)
    if np.any(lo > hi):
        return None, None
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    world = idx @ geom.voxel_to_world[:3, :3].T + geom.voxel_to_world[:3, 3]
    return tuple(slice(a, b + 1) for a, b in zip(lo, hi)), world


def _paint_segment(target: np.ndarray, geom: VolumeGeometry, p0, p1, radius: float, edge: float):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    pad = radius + edge
    sl, world = _region(geom, np.minimum(p0, p1) - pad, np.maximum(p0, p1) + pad)
    if sl is None:
        return
    seg = p1 - p0
    t = np.clip(((world - p0) @ seg) / max(seg @ seg, 1e-12), 0.0, 1.0)
    dist = np.linalg.norm(world - (p0 + t[..., None] * seg), axis=-1)
    value = np.clip((radius + 0.5 * edge - dist) / edge, 0.0, 1.0)
    np.maximum(target[sl], value, out=target[sl])


def _paint_ball(target: np.ndarray, geom: VolumeGeometry, center, radius: float, edge: float):
    c = np.asarray(center, float)
    pad = radius + edge
    sl, world = _region(geom, c - pad, c + pad)
    if sl is None:
        return
    dist = np.linalg.norm(world - c, axis=-1)
    value = np.clip((radius + 0.5 * edge - dist) / edge, 0.0, 1.0)
    np.maximum(target[sl], value, out=target[sl])


def _resolve(node, landmarks: LandmarkSet) -> np.ndarray:
    return landmarks.point(node) if isinstance(node, str) else np.asarray(node, float)


def _unit(v):
    return v / np.linalg.norm(v)


def _random_perpendicular(direction: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        v -= (v @ direction) * direction
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def _distractor_polyline(rng: np.random.Generator, semi_axes) -> list[np.ndarray]:
    axes = np.asarray(semi_axes)
    while True:
        p = rng.uniform(-1, 1, size=3) * axes * 0.8
        if np.sum((p / axes) ** 2) < 0.64:
            break
    direction = _unit(rng.normal(size=3))
    pts = [p]
    for _ in range(3):
        direction = _unit(direction + 0.6 * rng.normal(size=3))
        step = pts[-1] + direction * rng.uniform(12.0, 26.0)
        if np.sum((step / axes) ** 2) > 0.9:
            direction = -direction
            step = pts[-1] + direction * rng.uniform(12.0, 26.0)
        pts.append(step)
    return pts


def brain_mask(geom: VolumeGeometry, semi_axes=BRAIN_SEMI_AXES_MM) -> np.ndarray:
    idx = np.stack(np.meshgrid(*[np.arange(s) for s in geom.shape], indexing="ij"), axis=-1)
    world = idx @ geom.voxel_to_world[:3, :3].T + geom.voxel_to_world[:3, 3]
    return np.sum((world / np.asarray(semi_axes)) ** 2, axis=-1) <= 1.0


def generate_subject(spec: PhantomSpec, n_aneurysms: int, seed: int,
                     subject_id: str = "sub-000",
                     landmarks: LandmarkSet | None = None,
                     max_retries: int = 200) -> SubjectRecord:
    """Generate one deterministic phantom session.

    Raises
    ------
    GenerationError
        If the requested aneurysms cannot be placed without overlapping labels.
    """
    if n_aneurysms < 0:
        raise ValidationError(f"n_aneurysms must be >= 0, got {n_aneurysms}")
    landmarks = landmarks if landmarks is not None else default_landmarks()
    rng = np.random.default_rng(seed)
    geom = spec.geometry
    s = spec.voxel_size_mm
    vessels = np.zeros(geom.shape, dtype=np.float64)

    # arterial tree: remember, for each landmark, the local direction and radius
    local = {}
    for line in ARTERIAL_TREE:
        radius = rng.uniform(*spec.vessel_radius_range)
        pts = [_resolve(node, landmarks) for node in line]
        for a, b in zip(pts[:-1], pts[1:]):
            _paint_segment(vessels, geom, a, b, radius, s)
        for i, node in enumerate(line):
            if isinstance(node, str) and node not in local:
                prev_pt = pts[max(i - 1, 0)]
                next_pt = pts[min(i + 1, len(pts) - 1)]
                local[node] = (_unit(next_pt - prev_pt), radius)
    tree = vessels.copy()
    for _ in range(spec.n_vessel_segments):
        radius = rng.uniform(*spec.vessel_radius_range)
        pts = _distractor_polyline(rng, spec.brain_semi_axes_mm)
        for a, b in zip(pts[:-1], pts[1:]):
            _paint_segment(vessels, geom, a, b, radius, s)

    weights = np.array([spec.landmark_placement_weights.get(tag, 0.0) for tag in landmarks.location_tags])
    counts = {t: landmarks.location_tags.count(t) for t in set(landmarks.location_tags)}
    weights = weights / np.array([counts[t] for t in landmarks.location_tags])
    if n_aneurysms and weights.sum() <= 0:
        raise GenerationError("no landmark has a positive placement weight")
    weights = weights / weights.sum() if weights.sum() > 0 else weights

    bulges = np.zeros(geom.shape, dtype=np.float64)
    labels: list[WeakLabelSphere] = []
    log_lo, log_hi = np.log(spec.aneurysm_diameter_range_vox)
    shape_mm = np.asarray(geom.shape) * s
    for _ in range(n_aneurysms):
        for _attempt in range(max_retries):
            j = int(rng.choice(len(landmarks), p=weights))
            name = landmarks.names[j]
            direction, v_radius = local.get(name, (_unit(rng.normal(size=3)), spec.vessel_radius_range[0]))
            radius = 0.5 * float(np.exp(rng.uniform(log_lo, log_hi))) * s
            normal = _random_perpendicular(direction, rng)
            center = (landmarks.points[j] + normal * (v_radius + 0.6 * radius)
                      + direction * rng.uniform(-0.5, 0.5) * radius)
            label_r = radius + rng.uniform(*spec.label_margin_vox) * s
            inside = np.all(np.abs(center) + label_r < shape_mm / 2 - s)
            clear = all(np.linalg.norm(center - np.asarray(o.center_mm)) > label_r + o.radius_mm
                        for o in labels)
            if inside and clear:
                break
        else:
            raise GenerationError(
                f"{subject_id}: could not place {n_aneurysms} non-overlapping aneurysms "
                f"after {max_retries} retries")
        _paint_ball(bulges, geom, center, radius, s)
        labels.append(WeakLabelSphere(tuple(center), label_r, landmarks.location_tags[j]))

    mask = brain_mask(geom, spec.brain_semi_axes_mm)
    scale = rng.uniform(*spec.intensity_scale_range)
    tissue = spec.tissue_intensity * mask
    bright = np.maximum(vessels, bulges)
    image = tissue + (spec.vessel_intensity - tissue) * bright
    image = scale * image + rng.normal(0.0, spec.background_noise_sigma * scale, size=geom.shape)
    peak = tree.max()
    atlas = (tree / peak if peak > 0 else tree).astype(np.float32)
    return SubjectRecord(
        subject_id,
        Volume3D(geom, image.astype(np.float32)),
        mask,
        Volume3D(geom, atlas),
        np.eye(4),
        tuple(labels),
    )


def cohort_plan(cspec: CohortSpec) -> list[tuple[str, int, int]]:
    """``(subject_id, n_aneurysms, seed)`` for every subject of the cohort."""
    rng = np.random.default_rng(derive_seed(cspec.seed, "cohort-assignment"))
    positive = np.zeros(cspec.n_subjects, dtype=bool)
    positive[rng.permutation(cspec.n_subjects)[:cspec.n_positive]] = True
    plan = []
    for i in range(cspec.n_subjects):
        n = 0
        if positive[i]:
            n = 1 if rng.random() < cspec.p_single_aneurysm else 2
        plan.append((f"sub-{i + 1:03d}", n, derive_seed(cspec.seed, "subject", i)))
    return plan


def _generate_job(args):
    spec, sid, n, seed, landmarks = args
    return generate_subject(spec, n, seed, sid, landmarks)


def generate_records(cspec: CohortSpec, pspec: PhantomSpec,
                     landmarks: LandmarkSet | None = None, jobs: int = 1) -> list[SubjectRecord]:
    landmarks = landmarks if landmarks is not None else default_landmarks()
    args = [(pspec, sid, n, seed, landmarks) for sid, n, seed in cohort_plan(cspec)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_generate_job, args))
    return [_generate_job(a) for a in args]


def generate_cohort(cspec: CohortSpec, pspec: PhantomSpec, out_dir: str | os.PathLike,
                    landmarks: LandmarkSet | None = None, jobs: int = 1) -> Path:
    """Generate a phantom cohort on disk and return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    landmarks = landmarks if landmarks is not None else default_landmarks()
    entries = {}
    plan = cohort_plan(cspec)
    # generate in chunks so memory stays bounded for large cohorts
    chunk = max(1, jobs) * 4
    for start in range(0, len(plan), chunk):
        part = plan[start:start + chunk]
        args = [(pspec, sid, n, seed, landmarks) for sid, n, seed in part]
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as pool:
                records = list(pool.map(_generate_job, args))
        else:
            records = [_generate_job(a) for a in args]
        for rec in records:
            entries[rec.id] = save_subject(rec, out_dir / rec.id, relative_to=out_dir)
    n_pos = sum(1 for _, n, _ in plan if n > 0)
    meta = {"generator": "phantom", "cohort_spec": asdict(cspec), "phantom_spec": pspec.to_json(),
            "n_positive": n_pos, "n_control": len(plan) - n_pos,
            "n_aneurysms": sum(n for _, n, _ in plan)}
    log.info("generated %d subjects (%d positive) in %s", len(plan), n_pos, out_dir)
    return write_manifest(entries, out_dir / "cohort.json", meta)
