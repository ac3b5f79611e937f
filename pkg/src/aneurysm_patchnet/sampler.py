"""Positive and negative patch sampling and dataset assembly.

Crop convention: a side-``N`` patch centered at voxel ``c`` spans
``[c - N//2, c - N//2 + N - 1]`` along each axis (for even ``N`` that is
``[c - N/2, c + N/2 - 1]``). The small patch must lie inside the volume; the
large patch is zero-padded where it leaves the field of view.

On disk a dataset is a directory with a ``samples.json`` manifest and one
binary blob per sample under ``samples/``. A blob is a single JSON header
line followed by the little-endian float32 fields ``small``, ``large`` and
``features`` (C order), concatenated.
"""
from __future__ import annotations

import functools
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (DatasetBuildError, DomainError, PatchNetError, PatchTooLarge,
                     SamplingExhausted, ValidationError)
from .features import (N_FEATURES, LandmarkSet, UniformGrid, build_grid, default_landmarks,
                       spatial_features)
from .seeding import derive_seed
from .volumes import SubjectRecord, Volume3D, WeakLabelSphere, load_cohort, sphere_voxels

log = logging.getLogger(__name__)

POLICIES = ("random", "intensity_matched")
DATASET_FORMAT = "aneurysm-patches/1"
BLOB_DTYPE = "<f4"


@dataclass(frozen=True)
class SamplerConfig:
    small_side: int = 30
    large_side: int = 80
    negatives_per_subject: int = 8
    threshold_percentile: float = 5.0
    max_attempts: int = 10_000
    max_failed_fraction: float = 0.05

    def __post_init__(self):
        if self.small_side < 1 or self.large_side < self.small_side:
            raise ValidationError("patch sides must satisfy 1 <= small_side <= large_side")
        if self.negatives_per_subject < 0:
            raise ValidationError("negatives_per_subject must be >= 0")
        if not (0.0 <= self.threshold_percentile <= 100.0):
            raise ValidationError("threshold_percentile must lie in [0, 100]")
        if self.max_attempts < 1:
            raise ValidationError("max_attempts must be >= 1")

    @classmethod
    def quick(cls) -> "SamplerConfig":
        return cls(small_side=12, large_side=24)


@dataclass(frozen=True, eq=False)
class PatchPair:
    small: np.ndarray
    large: np.ndarray
    center_voxel: tuple[int, int, int]
    center_canonical: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class BrightnessThresholds:
    """Minimum atlas brightness for intensity-matched negatives."""

    local_thr: float
    global_thr: float

    def __post_init__(self):
        if not (np.isfinite(self.local_thr) and np.isfinite(self.global_thr)):
            raise ValidationError("thresholds must be finite")


@dataclass(eq=False)
class PatchSample:
    pair: PatchPair
    features: np.ndarray
    label: int
    subject_id: str
    sampling_policy: str
    atlas_local: float = float("nan")
    atlas_global: float = float("nan")
    fallback: bool = False
    id: str = ""

    def __post_init__(self):
        if (self.label == 1) != (self.sampling_policy == "positive"):
            raise ValidationError("label must be 1 exactly for positive samples")

    @property
    def small_box(self) -> tuple[np.ndarray, np.ndarray]:
        side = self.pair.small.shape[0]
        return patch_box(self.pair.center_voxel, side)


def patch_box(center, side: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive ``(lo, hi)`` voxel bounds of a side-``side`` patch at ``center``."""
    lo = np.asarray(center, dtype=np.int64) - side // 2
    return lo, lo + side - 1


def boxes_overlap(a, b) -> bool:
    (alo, ahi), (blo, bhi) = a, b
    return bool(np.all(alo <= bhi) and np.all(blo <= ahi))


def _crop(data: np.ndarray, center, side: int, pad: bool) -> np.ndarray:
    lo, hi = patch_box(center, side)
    shape = np.asarray(data.shape)
    if np.all(lo >= 0) and np.all(hi < shape):
        return data[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1].copy()
    if not pad:
        raise DomainError(f"patch of side {side} at {tuple(center)} exceeds volume {tuple(shape)}")
    out = np.zeros((side,) * 3, dtype=data.dtype)
    src_lo = np.maximum(lo, 0)
    src_hi = np.minimum(hi, shape - 1)
    if np.any(src_lo > src_hi):
        return out
    dst_lo = src_lo - lo
    dst_hi = dst_lo + (src_hi - src_lo)
    out[dst_lo[0]:dst_hi[0] + 1, dst_lo[1]:dst_hi[1] + 1, dst_lo[2]:dst_hi[2] + 1] = \
        data[src_lo[0]:src_hi[0] + 1, src_lo[1]:src_hi[1] + 1, src_lo[2]:src_hi[2] + 1]
    return out


def extract_patch_pair(volume: Volume3D, center_voxel, small_side: int = 30,
                       large_side: int = 80) -> PatchPair:
    """Concentric small and large crops; the large one is zero-padded at borders."""
    center = tuple(int(c) for c in center_voxel)
    if not volume.geometry.contains(center):
        raise DomainError(f"center {center} outside volume of shape {volume.shape}")
    small = _crop(volume.intensities, center, small_side, pad=False)
    large = _crop(volume.intensities, center, large_side, pad=True)
    return PatchPair(small, large, center)


def standardize(patch: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance copy (population std); near-constant input maps to zeros."""
    x = np.asarray(patch, dtype=np.float64)
    std = x.std()
    if std < 1e-8:
        return np.zeros_like(x)
    return (x - x.mean()) / std


# --------------------------------------------------------------------------
# per-subject helpers

@functools.lru_cache(maxsize=None)
def _default_context() -> tuple[UniformGrid, LandmarkSet]:
    return build_grid(), default_landmarks()


class SubjectSampler:
    """Caches the candidate centers and atlas box sums of one subject."""

    def __init__(self, subject: SubjectRecord, config: SamplerConfig = SamplerConfig(),
                 grid: UniformGrid | None = None, landmarks: LandmarkSet | None = None):
        self.subject = subject
        self.config = config
        dg, dl = _default_context()
        self.grid = grid if grid is not None else dg
        self.landmarks = landmarks if landmarks is not None else dl
        atlas = subject.atlas.intensities.astype(np.float64)
        mask = subject.brain_mask
        if not mask.any():
            raise DomainError(f"{subject.id}: empty brain mask")
        self.mask_atlas_mean = float(atlas[mask].mean())
        integral = np.zeros(tuple(s + 1 for s in atlas.shape))
        integral[1:, 1:, 1:] = atlas.cumsum(0).cumsum(1).cumsum(2)
        self._integral = integral
        n = config.small_side
        h = n // 2
        shape = np.asarray(mask.shape)
        idx = np.argwhere(mask)
        fits = np.all(idx >= h, axis=1) & np.all(idx <= shape - n + h, axis=1)
        self.candidates = idx[fits]

    # scores --------------------------------------------------------------
    def local_scores(self, centers: np.ndarray) -> np.ndarray:
        """Mean atlas value over the small box around each center."""
        n = self.config.small_side
        lo = np.atleast_2d(centers) - n // 2
        hi = lo + n
        I = self._integral
        s = (I[hi[:, 0], hi[:, 1], hi[:, 2]] - I[lo[:, 0], hi[:, 1], hi[:, 2]]
             - I[hi[:, 0], lo[:, 1], hi[:, 2]] - I[hi[:, 0], hi[:, 1], lo[:, 2]]
             + I[lo[:, 0], lo[:, 1], hi[:, 2]] + I[lo[:, 0], hi[:, 1], lo[:, 2]]
             + I[hi[:, 0], lo[:, 1], lo[:, 2]] - I[lo[:, 0], lo[:, 1], lo[:, 2]])
        return s / n ** 3

    def scores(self, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        local = self.local_scores(centers)
        if self.mask_atlas_mean <= 0:
            raise DomainError(f"{self.subject.id}: atlas is zero over the whole brain mask")
        return local, local / self.mask_atlas_mean

    # samples -------------------------------------------------------------
    def make_sample(self, center, label: int, policy: str, fallback: bool = False) -> PatchSample:
        cfg = self.config
        pair = extract_patch_pair(self.subject.volume, center, cfg.small_side, cfg.large_side)
        canonical = self.subject.to_canonical(np.asarray(pair.center_voxel))
        pair = PatchPair(pair.small, pair.large, pair.center_voxel, tuple(float(v) for v in canonical))
        feats = spatial_features(canonical, self.grid, self.landmarks)
        local = float(self.local_scores(np.asarray([center]))[0])
        glob = local / self.mask_atlas_mean if self.mask_atlas_mean > 0 else float("nan")
        return PatchSample(pair, feats, label, self.subject.id, policy, local, glob, fallback)

    def admissible_positive_centers(self, label: WeakLabelSphere) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis inclusive bounds of centers whose small box contains the whole label."""
        n = self.config.small_side
        h = n // 2
        vox = sphere_voxels(label, self.subject.geometry)
        lo, hi = vox.min(axis=0), vox.max(axis=0)
        if np.any(hi - lo + 1 > n):
            raise PatchTooLarge(
                f"{self.subject.id}: label extent {tuple(hi - lo + 1)} exceeds small patch side {n}")
        shape = np.asarray(self.subject.geometry.shape)
        c_lo = np.maximum(hi - n + 1 + h, h)
        c_hi = np.minimum(lo + h, shape - n + h)
        if np.any(c_lo > c_hi):
            raise PatchTooLarge(f"{self.subject.id}: no small patch inside the volume contains the label")
        return c_lo, c_hi

    def label_box(self, label: WeakLabelSphere):
        vox = sphere_voxels(label, self.subject.geometry)
        return vox.min(axis=0), vox.max(axis=0)

    def _draw(self, positive_regions, rng: np.random.Generator, accept):
        """Sequentially draw candidates (vectorised in chunks) until ``accept`` passes.

        Returns the first accepted center, or ``None`` plus the best rejected
        non-overlapping candidate according to the ``accept`` score.
        """
        cfg = self.config
        if len(self.candidates) == 0:
            raise SamplingExhausted(
                f"{self.subject.id}: no brain-mask voxel admits a {cfg.small_side}^3 patch")
        n = cfg.small_side
        regions = [(np.asarray(lo), np.asarray(hi)) for lo, hi in positive_regions]
        best, best_score = None, -np.inf
        drawn = 0
        while drawn < cfg.max_attempts:
            k = min(256, cfg.max_attempts - drawn)
            centers = self.candidates[rng.integers(0, len(self.candidates), size=k)]
            drawn += k
            ok = np.ones(k, dtype=bool)
            lo = centers - n // 2
            hi = lo + n - 1
            for rlo, rhi in regions:
                ok &= ~(np.all(lo <= rhi, axis=1) & np.all(rlo <= hi, axis=1))
            passed, score = accept(centers)
            good = ok & passed
            if good.any():
                return centers[int(np.argmax(good))], None
            score = np.where(ok, score, -np.inf)
            j = int(np.argmax(score))
            if score[j] > best_score:
                best, best_score = centers[j], score[j]
        return None, best

    def negative_random(self, positive_regions, rng: np.random.Generator) -> PatchSample:
        center, _ = self._draw(positive_regions, rng,
                               lambda c: (np.ones(len(c), bool), np.zeros(len(c))))
        if center is None:
            raise SamplingExhausted(
                f"{self.subject.id}: no admissible random negative in {self.config.max_attempts} draws")
        return self.make_sample(center, 0, "random")

    def negative_matched(self, thresholds: BrightnessThresholds, positive_regions,
                         rng: np.random.Generator) -> PatchSample:
        def accept(centers):
            local, glob = self.scores(centers)
            passed = (local >= thresholds.local_thr) & (glob >= thresholds.global_thr)
            score = np.minimum(local / max(thresholds.local_thr, 1e-12),
                               glob / max(thresholds.global_thr, 1e-12))
            return passed, score

        center, best = self._draw(positive_regions, rng, accept)
        if center is not None:
            return self.make_sample(center, 0, "intensity_matched")
        if best is None:
            raise SamplingExhausted(
                f"{self.subject.id}: every candidate overlaps a positive patch")
        log.warning("%s: intensity-matched search exhausted after %d draws; using best candidate",
                    self.subject.id, self.config.max_attempts)
        return self.make_sample(best, 0, "intensity_matched", fallback=True)


def sample_positive(subject: SubjectRecord | SubjectSampler, label: WeakLabelSphere,
                    rng: np.random.Generator, config: SamplerConfig = SamplerConfig()) -> PatchSample:
    """Non-centered positive patch whose small box fully contains the rasterized label."""
    ss = subject if isinstance(subject, SubjectSampler) else SubjectSampler(subject, config)
    c_lo, c_hi = ss.admissible_positive_centers(label)
    center = np.array([rng.integers(a, b + 1) for a, b in zip(c_lo, c_hi)])
    return ss.make_sample(center, 1, "positive")


def sample_negative_random(subject: SubjectRecord | SubjectSampler, positive_regions,
                           rng: np.random.Generator, config: SamplerConfig = SamplerConfig()) -> PatchSample:
    ss = subject if isinstance(subject, SubjectSampler) else SubjectSampler(subject, config)
    return ss.negative_random(positive_regions, rng)


def sample_negative_intensity_matched(subject: SubjectRecord | SubjectSampler,
                                      thresholds: BrightnessThresholds, positive_regions,
                                      rng: np.random.Generator,
                                      config: SamplerConfig = SamplerConfig()) -> PatchSample:
    ss = subject if isinstance(subject, SubjectSampler) else SubjectSampler(subject, config)
    return ss.negative_matched(thresholds, positive_regions, rng)


def compute_thresholds(positive_samples: Iterable[PatchSample], percentile: float = 5.0) -> BrightnessThresholds:
    """Thresholds at the given percentile of the positives' local and global atlas scores."""
    samples = list(positive_samples)
    if not samples:
        raise DomainError("at least one positive sample is required to derive thresholds")
    local = np.array([s.atlas_local for s in samples], dtype=np.float64)
    glob = np.array([s.atlas_global for s in samples], dtype=np.float64)
    if not np.all(np.isfinite(glob)):
        raise DomainError("atlas is zero over the brain mask of a positive subject")
    return BrightnessThresholds(float(np.percentile(local, percentile)),
                                float(np.percentile(glob, percentile)))


# --------------------------------------------------------------------------
# per-subject extraction

@dataclass
class PositiveExtraction:
    samples: list[PatchSample]
    regions: list[tuple[np.ndarray, np.ndarray]]
    skipped: list[str] = field(default_factory=list)


def extract_positives(ss: SubjectSampler, seed: int) -> PositiveExtraction:
    """One positive per label; too-large labels are skipped but still excluded from negatives."""
    rng = np.random.default_rng(derive_seed(seed, ss.subject.id, "positive"))
    out = PositiveExtraction([], [])
    for k, label in enumerate(ss.subject.labels):
        try:
            sample = sample_positive(ss, label, rng, ss.config)
        except PatchTooLarge as exc:
            log.warning("skipping positive: %s", exc)
            out.skipped.append(f"{ss.subject.id}#{k}")
            out.regions.append(ss.label_box(label))
            continue
        sample.id = f"{ss.subject.id}_pos{k}"
        out.samples.append(sample)
        out.regions.append(sample.small_box)
    return out


def extract_negatives(ss: SubjectSampler, policy: str, regions, seed: int,
                      thresholds: BrightnessThresholds | None = None) -> list[PatchSample]:
    if policy not in POLICIES:
        raise ValidationError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if policy == "intensity_matched" and thresholds is None:
        raise ValidationError("intensity-matched sampling needs thresholds")
    rng = np.random.default_rng(derive_seed(seed, ss.subject.id, policy))
    out = []
    for k in range(ss.config.negatives_per_subject):
        if policy == "random":
            sample = ss.negative_random(regions, rng)
        else:
            sample = ss.negative_matched(thresholds, regions, rng)
        sample.id = f"{ss.subject.id}_neg{k}"
        out.append(sample)
    return out


# --------------------------------------------------------------------------
# datasets

class PatchDataset:
    """Stacked patch arrays plus per-sample provenance."""

    def __init__(self, small: np.ndarray, large: np.ndarray, features: np.ndarray,
                 meta: Sequence[dict], info: dict | None = None):
        self.small = np.asarray(small, dtype=np.float32)
        self.large = np.asarray(large, dtype=np.float32)
        self.features = np.asarray(features, dtype=np.float32)
        self.meta = [dict(m) for m in meta]
        self.info = dict(info or {})
        n = len(self.meta)
        if not (len(self.small) == len(self.large) == len(self.features) == n):
            raise ValidationError("dataset arrays and metadata disagree in length")

    @classmethod
    def from_samples(cls, samples: Sequence[PatchSample], info: dict | None = None,
                     small_side: int = 30, large_side: int = 80) -> "PatchDataset":
        if samples:
            small = np.stack([s.pair.small for s in samples])
            large = np.stack([s.pair.large for s in samples])
            feats = np.stack([s.features for s in samples])
        else:
            small = np.zeros((0,) + (small_side,) * 3)
            large = np.zeros((0,) + (large_side,) * 3)
            feats = np.zeros((0, N_FEATURES))
        meta = [{
            "id": s.id, "label": int(s.label), "policy": s.sampling_policy,
            "subject_id": s.subject_id, "center_voxel": [int(v) for v in s.pair.center_voxel],
            "center_canonical": [float(v) for v in s.pair.center_canonical],
            "atlas_local": float(s.atlas_local), "atlas_global": float(s.atlas_global),
            "fallback": bool(s.fallback),
        } for s in samples]
        return cls(small, large, feats, meta, info)

    def __len__(self):
        return len(self.meta)

    @property
    def labels(self) -> np.ndarray:
        return np.array([m["label"] for m in self.meta], dtype=np.int64)

    @property
    def ids(self) -> list[str]:
        return [m["id"] for m in self.meta]

    @property
    def subject_ids(self) -> np.ndarray:
        return np.array([m["subject_id"] for m in self.meta])

    def subset(self, index) -> "PatchDataset":
        index = np.asarray(index, dtype=np.int64)
        return PatchDataset(self.small[index], self.large[index], self.features[index],
                            [self.meta[i] for i in index], self.info)

    def for_subjects(self, subject_ids: Iterable[str]) -> "PatchDataset":
        wanted = set(subject_ids)
        return self.subset([i for i, m in enumerate(self.meta) if m["subject_id"] in wanted])

    @staticmethod
    def concat(parts: Sequence["PatchDataset"], info: dict | None = None) -> "PatchDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValidationError("cannot concatenate zero non-empty datasets")
        return PatchDataset(np.concatenate([p.small for p in parts]),
                            np.concatenate([p.large for p in parts]),
                            np.concatenate([p.features for p in parts]),
                            [m for p in parts for m in p.meta], info)


def _as_records(cohort) -> list[SubjectRecord]:
    if isinstance(cohort, (str, os.PathLike)):
        return load_cohort(cohort)
    return list(cohort)


def sample_cohort(records: Sequence[SubjectRecord], policy: str, seed: int,
                  config: SamplerConfig = SamplerConfig(),
                  grid: UniformGrid | None = None, landmarks: LandmarkSet | None = None,
                  thresholds: BrightnessThresholds | None = None,
                  threshold_subjects: Iterable[str] | None = None) -> PatchDataset:
    """Positives plus ``negatives_per_subject`` negatives for every subject.

    For the intensity-matched policy the thresholds come from ``thresholds``
    or, if absent, from the positives of ``threshold_subjects`` (default: all).
    """
    if policy not in POLICIES:
        raise ValidationError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    samplers, positives, failures = {}, {}, []
    for rec in records:
        try:
            ss = SubjectSampler(rec, config, grid, landmarks)
            samplers[rec.id] = ss
            positives[rec.id] = extract_positives(ss, seed)
        except PatchNetError as exc:
            failures.append({"subject_id": rec.id, "error": str(exc)})
    if policy == "intensity_matched" and thresholds is None:
        chosen = set(threshold_subjects) if threshold_subjects is not None else set(positives)
        pool = [s for sid, ext in positives.items() if sid in chosen for s in ext.samples]
        thresholds = compute_thresholds(pool, config.threshold_percentile)
    samples = []
    for rec in records:
        if rec.id not in positives:
            continue
        ext = positives[rec.id]
        try:
            negs = extract_negatives(samplers[rec.id], policy, ext.regions, seed, thresholds)
        except PatchNetError as exc:
            failures.append({"subject_id": rec.id, "error": str(exc)})
            continue
        samples.extend(ext.samples)
        samples.extend(negs)
    if records and len(failures) > config.max_failed_fraction * len(records):
        raise DatasetBuildError(f"{len(failures)} of {len(records)} subjects failed: {failures[:5]}")
    for f in failures:
        log.warning("subject %s failed: %s", f["subject_id"], f["error"])
    skipped = [k for ext in positives.values() for k in ext.skipped]
    n_pos = sum(s.label for s in samples)
    info = {
        "format": DATASET_FORMAT, "policy": policy, "seed": int(seed),
        "config": asdict(config),
        "thresholds": asdict(thresholds) if thresholds is not None else None,
        "counts": {"positive": n_pos, "negative": len(samples) - n_pos,
                   "subjects": len(records), "fallbacks": sum(s.fallback for s in samples)},
        "skipped_positives": skipped, "failures": failures,
    }
    return PatchDataset.from_samples(samples, info, config.small_side, config.large_side)


def build_dataset(cohort, policy: str, negatives_per_subject: int = 8, seed: int = 0,
                  config: SamplerConfig | None = None, out_dir: str | os.PathLike | None = None,
                  grid: UniformGrid | None = None, landmarks: LandmarkSet | None = None) -> PatchDataset:
    """Sample a whole cohort (manifest path or records) and optionally write it to ``out_dir``."""
    config = config or SamplerConfig()
    if negatives_per_subject != config.negatives_per_subject:
        config = SamplerConfig(**{**asdict(config), "negatives_per_subject": negatives_per_subject})
    ds = sample_cohort(_as_records(cohort), policy, seed, config, grid, landmarks)
    if out_dir is not None:
        write_dataset(ds, out_dir)
    return ds


def write_dataset(ds: PatchDataset, out_dir: str | os.PathLike) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(ds.meta):
        header = {"dtype": BLOB_DTYPE, "fields": ["small", "large", "D"],
                  "shape": {"small": list(ds.small.shape[1:]), "large": list(ds.large.shape[1:]),
                            "D": list(ds.features.shape[1:])}}
        with open(out_dir / "samples" / f"{m['id']}.bin", "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
            for arr in (ds.small[i], ds.large[i], ds.features[i]):
                fh.write(np.ascontiguousarray(arr, dtype=BLOB_DTYPE).tobytes())
    doc = dict(ds.info)
    doc["samples"] = ds.meta
    path = out_dir / "samples.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def read_dataset(directory: str | os.PathLike) -> PatchDataset:
    directory = Path(directory)
    path = directory / "samples.json"
    if not path.exists():
        raise FileNotFoundError(f"missing dataset manifest: {path}")
    doc = json.loads(path.read_text())
    meta = doc.pop("samples")
    small, large, feats = [], [], []
    for m in meta:
        with open(directory / "samples" / f"{m['id']}.bin", "rb") as fh:
            header = json.loads(fh.readline())
            raw = fh.read()
        shapes = header["shape"]
        arrays, offset = [], 0
        for name in header["fields"]:
            count = int(np.prod(shapes[name]))
            arrays.append(np.frombuffer(raw, dtype=header["dtype"], count=count,
                                        offset=offset).reshape(shapes[name]))
            offset += 4 * count
        small.append(arrays[0])
        large.append(arrays[1])
        feats.append(arrays[2])
    cfg = doc.get("config", {})
    if not meta:
        s, l = cfg.get("small_side", 30), cfg.get("large_side", 80)
        return PatchDataset(np.zeros((0, s, s, s)), np.zeros((0, l, l, l)),
                            np.zeros((0, N_FEATURES)), [], doc)
    return PatchDataset(np.stack(small), np.stack(large), np.stack(feats), meta, doc)
