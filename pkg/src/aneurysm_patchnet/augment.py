"""Appearance augmentation for positive patch pairs.

One transform is drawn per call and applied with the same parameters to the
small and the large patch. Rotations act in the axial (x, y) plane and the
flip mirrors the x axis, so both are exact index permutations. The elastic
field is generated on the large patch grid and cropped for the small patch,
which keeps the two deformations concentric and identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .sampler import PatchPair

TRANSFORMS = ("rot90", "rot180", "rot270", "flip", "elastic", "contrast")


@dataclass(frozen=True)
class ElasticSpec:
    grid_spacing_vox: float = 10.0
    max_displacement_vox: float = 2.0
    smoothing_sigma_vox: float = 4.0


@dataclass(frozen=True)
class AugmentationSpec:
    rotations_deg: tuple[int, ...] = (90, 180, 270)
    horizontal_flip: bool = True
    elastic: ElasticSpec | None = ElasticSpec()
    contrast: tuple[float, float] | None = (0.7, 1.4)

    def __post_init__(self):
        if any(r not in (90, 180, 270) for r in self.rotations_deg):
            raise ValidationError(f"rotations must be multiples of 90 in (90, 180, 270), got {self.rotations_deg}")
        if self.elastic is not None:
            if self.elastic.max_displacement_vox < 0:
                raise ValidationError("max_displacement_vox must be >= 0")
            if self.elastic.grid_spacing_vox <= 0 or self.elastic.smoothing_sigma_vox < 0:
                raise ValidationError("elastic grid spacing must be > 0 and sigma >= 0")
        if self.contrast is not None:
            g_min, g_max = self.contrast
            if not (0 < g_min <= g_max):
                raise ValidationError(f"gamma range must satisfy 0 < g_min <= g_max, got {self.contrast}")

    @property
    def enabled(self) -> tuple[str, ...]:
        names = [f"rot{r}" for r in self.rotations_deg]
        if self.horizontal_flip:
            names.append("flip")
        if self.elastic is not None:
            names.append("elastic")
        if self.contrast is not None:
            names.append("contrast")
        return tuple(names)

    @classmethod
    def from_json(cls, doc) -> "AugmentationSpec":
        doc = dict(doc)
        el = doc.get("elastic", {})
        return cls(rotations_deg=tuple(doc.get("rotations_deg", (90, 180, 270))),
                   horizontal_flip=bool(doc.get("horizontal_flip", True)),
                   elastic=None if el is None else ElasticSpec(**el),
                   contrast=None if doc.get("contrast", (0.7, 1.4)) is None else tuple(doc.get("contrast", (0.7, 1.4))))


def rotate_axial(patch: np.ndarray, degrees: int) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(patch, k=degrees // 90, axes=(0, 1)))


def flip_x(patch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(patch[::-1])


def gamma_contrast(patch: np.ndarray, gamma: float) -> np.ndarray:
    """Gamma curve on min-max normalized intensities, mapped back to the input range."""
    lo, hi = patch.min(), patch.max()
    if gamma == 1.0 or hi - lo <= 0:
        return patch.copy()
    unit = (patch - lo) / (hi - lo)
    return (unit ** gamma * (hi - lo) + lo).astype(patch.dtype)


def displacement_field(shape, spec: ElasticSpec, rng: np.random.Generator) -> np.ndarray:
    """Smooth random field of shape ``(3, *shape)`` in voxels."""
    coarse = [max(2, int(np.ceil(s / spec.grid_spacing_vox)) + 1) for s in shape]
    field = []
    for _ in range(3):
        ctrl = rng.uniform(-1.0, 1.0, size=coarse) * spec.max_displacement_vox
        dense = ndimage.zoom(ctrl, [s / c for s, c in zip(shape, coarse)], order=1, mode="nearest")
        dense = dense[:shape[0], :shape[1], :shape[2]]
        if spec.smoothing_sigma_vox > 0:
            dense = ndimage.gaussian_filter(dense, spec.smoothing_sigma_vox, mode="nearest")
        field.append(dense)
    return np.stack(field)


def warp(patch: np.ndarray, field: np.ndarray) -> np.ndarray:
    coords = np.indices(patch.shape, dtype=np.float64) + field
    return ndimage.map_coordinates(patch, coords, order=1, mode="nearest").astype(patch.dtype)


def elastic_pair(pair: PatchPair, spec: ElasticSpec, rng: np.random.Generator) -> PatchPair:
    large_side = pair.large.shape[0]
    small_side = pair.small.shape[0]
    field = displacement_field(pair.large.shape, spec, rng)
    off = large_side // 2 - small_side // 2
    inner = (slice(off, off + small_side),) * 3
    large = warp(pair.large, field)
    if np.array_equal(pair.large[inner], pair.small):
        # concentric crops: the small output is the same crop of the warped context
        small = large[inner].copy()
    else:
        small = warp(pair.small, field[(slice(None),) + inner])
    return PatchPair(small, large, pair.center_voxel, pair.center_canonical)


def apply_transform(pair: PatchPair, name: str, spec: AugmentationSpec,
                    rng: np.random.Generator) -> PatchPair:
    if name.startswith("rot"):
        deg = int(name[3:])
        return PatchPair(rotate_axial(pair.small, deg), rotate_axial(pair.large, deg),
                         pair.center_voxel, pair.center_canonical)
    if name == "flip":
        return PatchPair(flip_x(pair.small), flip_x(pair.large), pair.center_voxel, pair.center_canonical)
    if name == "elastic":
        return elastic_pair(pair, spec.elastic, rng)
    if name == "contrast":
        gamma = float(rng.uniform(*spec.contrast))
        return PatchPair(gamma_contrast(pair.small, gamma), gamma_contrast(pair.large, gamma),
                         pair.center_voxel, pair.center_canonical)
    raise ValidationError(f"unknown transform {name!r}")


def apply_augmentation(pair: PatchPair, spec: AugmentationSpec, rng: np.random.Generator) -> PatchPair:
    """Apply one uniformly drawn enabled transform to both scales of ``pair``."""
    enabled = spec.enabled
    if not enabled:
        return pair
    name = enabled[int(rng.integers(len(enabled)))]
    return apply_transform(pair, name, spec, rng)
