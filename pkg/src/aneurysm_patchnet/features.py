"""Anatomical spatial features attached to every patch.

The feature vector has a fixed positional layout that the network consumes::

    [0:3]     patch center in canonical space (mm)
    [3:219]   distances to the 6 x 6 x 6 uniform grid points (lexicographic order)
    [219:243] distances to the 24 arterial landmarks (file order)
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError

N_LANDMARKS = 24
GRID_PER_AXIS = 6
N_FEATURES = 3 + GRID_PER_AXIS ** 3 + N_LANDMARKS  # 243

#: Canonical-space brain bounding box shared by every subject (phantom template).
DEFAULT_GRID_BBOX = ((-52.0, -56.0, -48.0), (52.0, 56.0, 48.0))

CENTER_SLICE = slice(0, 3)
GRID_SLICE = slice(3, 3 + GRID_PER_AXIS ** 3)
LANDMARK_SLICE = slice(3 + GRID_PER_AXIS ** 3, N_FEATURES)


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    points: np.ndarray
    names: tuple[str, ...]
    location_tags: tuple[str, ...]

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"landmarks must be an (n, 3) array, got shape {pts.shape}")
        if len(pts) != N_LANDMARKS:
            raise ValidationError(f"expected {N_LANDMARKS} landmarks, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("landmark coordinates must be finite")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValidationError("landmark coordinates contain duplicates")
        if len(self.names) != len(pts) or len(self.location_tags) != len(pts):
            raise ValidationError("one name and one location tag per landmark are required")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "location_tags", tuple(self.location_tags))

    def __len__(self):
        return len(self.points)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def point(self, name: str) -> np.ndarray:
        return self.points[self.index(name)]


@dataclass(frozen=True, eq=False)
class UniformGrid:
    points: np.ndarray
    n_per_axis: int
    bounding_box: tuple[tuple[float, float, float], tuple[float, float, float]]


def build_grid(bbox=DEFAULT_GRID_BBOX, n_per_axis: int = GRID_PER_AXIS) -> UniformGrid:
    """Cartesian grid of ``n_per_axis`` evenly spaced values per axis, faces included.

    Points are ordered lexicographically by (x, y, z) axis index.
    """
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bbox)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(lo >= hi):
        raise DomainError(f"degenerate bounding box {bbox}")
    if n_per_axis < 2:
        raise DomainError(f"n_per_axis must be >= 2, got {n_per_axis}")
    axes = [np.linspace(lo[i], hi[i], n_per_axis) for i in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    pts.setflags(write=False)
    return UniformGrid(pts, n_per_axis, (tuple(lo), tuple(hi)))


def spatial_features(center_canonical, grid: UniformGrid, landmarks: LandmarkSet) -> np.ndarray:
    """Return the spatial feature vector for a patch centered at ``center_canonical`` (mm)."""
    c = np.asarray(center_canonical, dtype=np.float64)
    if c.shape != (3,) or not np.all(np.isfinite(c)):
        raise DomainError(f"center must be 3 finite reals, got {center_canonical}")
    return np.concatenate([
        c,
        np.sqrt(((grid.points - c) ** 2).sum(axis=1)),
        np.sqrt(((landmarks.points - c) ** 2).sum(axis=1)),
    ])


def spatial_features_batch(centers: np.ndarray, grid: UniformGrid, landmarks: LandmarkSet) -> np.ndarray:
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    return np.stack([spatial_features(c, grid, landmarks) for c in centers])


def landmarks_from_json(doc: Sequence[dict]) -> LandmarkSet:
    try:
        pts = [[float(v) for v in entry["mni_mm"]] for entry in doc]
        names = [str(entry["name"]) for entry in doc]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed landmark entry: {exc}") from exc
    if any(len(p) != 3 for p in pts):
        raise ValidationError("every landmark needs exactly 3 coordinates")
    tags = [str(entry.get("location", entry["name"])) for entry in doc]
    return LandmarkSet(np.asarray(pts).reshape(-1, 3), names, tags)


def load_landmarks(path: str | os.PathLike) -> LandmarkSet:
    """Read a landmark file: a JSON list of ``{"name", "mni_mm": [x, y, z]}`` objects."""
    with open(path) as fh:
        return landmarks_from_json(json.load(fh))


def default_landmarks() -> LandmarkSet:
    """The 24 phantom-mode landmarks shipped with the package."""
    text = resources.files(__package__).joinpath("data/phantom_landmarks.json").read_text()
    return landmarks_from_json(json.loads(text))
