"""Acceptance criteria, one test per criterion.

``pytest tests/test_acceptance.py -v -s`` prints one PASS/FAIL line per
criterion at the end of the run (see ``conftest.py``). Criterion 7 runs the
full ten-repetition experiment on the quick preset and takes tens of minutes
on one CPU core.
"""
import hashlib
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import rankdata

from aneurysm_patchnet.cli import main
from aneurysm_patchnet.config import PipelineConfig
from aneurysm_patchnet.experiment import run_experiment
from aneurysm_patchnet.features import build_grid, default_landmarks, spatial_features
from aneurysm_patchnet.features import CENTER_SLICE, GRID_SLICE, LANDMARK_SLICE, LandmarkSet
from aneurysm_patchnet.metrics import pr_auc, roc_auc, wilcoxon_signed_rank
from aneurysm_patchnet.model import ModelConfig, build_model, count_parameters, finite_difference_gradients
from aneurysm_patchnet.phantom import PhantomSpec, generate_records, generate_subject
from aneurysm_patchnet.sampler import (SamplerConfig, SubjectSampler, compute_thresholds, extract_positives,
                                       patch_box, sample_cohort)
from aneurysm_patchnet.seeding import derive_seed
from aneurysm_patchnet.volumes import rasterize_sphere

from .oracles import pairwise_auc, random_instance, threshold_average_precision


# 1 ---------------------------------------------------------------------------------

def test_criterion_1_feature_vector_contract():
    grid, lms = build_grid(), default_landmarks()
    rng = np.random.default_rng(101)
    lo, hi = np.array(grid.bounding_box[0]), np.array(grid.bounding_box[1])
    for case in range(1000):
        c = rng.uniform(lo - 10, hi + 10)
        d = spatial_features(c, grid, lms)
        assert d.shape == (243,)
        assert np.array_equal(d[CENTER_SLICE], c)
        # layout against an independent distance oracle
        for j in rng.choice(216, 3, replace=False):
            assert abs(d[GRID_SLICE][j] - math.dist(c, grid.points[j])) <= 1e-12
        for j in rng.choice(24, 3, replace=False):
            assert abs(d[LANDMARK_SLICE][j] - math.dist(c, lms.points[j])) <= 1e-12

        # translating the center, the grid and the landmarks together leaves every distance unchanged
        t = rng.uniform(-50, 50, 3)
        moved_grid = build_grid((tuple(lo + t), tuple(hi + t)))
        moved_lms = LandmarkSet(lms.points + t, lms.names, lms.location_tags)
        dt = spatial_features(c + t, moved_grid, moved_lms)
        assert np.max(np.abs(dt[3:] - d[3:])) <= 1e-12
        assert np.max(np.abs(dt[CENTER_SLICE] - (c + t))) <= 1e-12

        # a center on a landmark or on a grid point has exactly zero distance there
        k = case % 24
        assert spatial_features(lms.points[k], grid, lms)[LANDMARK_SLICE][k] == 0.0
        g = case % 216
        assert spatial_features(grid.points[g], grid, lms)[GRID_SLICE][g] == 0.0


# 2 ---------------------------------------------------------------------------------

_SIGNS: dict[int, np.ndarray] = {}


def _enumerated_wilcoxon(d):
    """Independent oracle: scipy ranks and an explicit 2^n sign matrix."""
    d = d[d != 0]
    n = len(d)
    if n not in _SIGNS:
        _SIGNS[n] = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
    doubled = np.rint(2 * rankdata(np.abs(d))).astype(np.int64)
    w = int(doubled[d > 0].sum())
    all_w = _SIGNS[n] @ doubled
    p = min(1.0, 2 * min(np.count_nonzero(all_w <= w), np.count_nonzero(all_w >= w)) / 2 ** n)
    return w / 2, p


def test_criterion_2_metric_oracles():
    start = time.time()
    rng = np.random.default_rng(202)
    n_instances = 10_000
    for i in range(n_instances):
        s, y = random_instance(rng, 20, tie_levels=(None, 3, 8)[i % 3])
        assert abs(pr_auc(s, y) - threshold_average_precision(list(s), list(y))) <= 1e-9
        if 0 < y.sum() < len(y):
            assert abs(roc_auc(s, y) - pairwise_auc(list(s), list(y))) <= 1e-9
    checked = 0
    while checked < n_instances:
        n = int(rng.integers(1, 13))
        d = rng.integers(-4, 5, n).astype(float) if checked % 2 else rng.normal(size=n)
        if not np.any(d):
            continue
        w, p = _enumerated_wilcoxon(d)
        res = wilcoxon_signed_rank(d)
        assert res.statistic == w
        assert abs(res.p_value - p) <= 1e-12
        checked += 1
    elapsed = time.time() - start
    print(f"\n{n_instances} instances per metric in {elapsed:.1f} s")
    assert elapsed < 120


# 3 ---------------------------------------------------------------------------------

def test_criterion_3_gradient_check():
    start = time.time()
    cfg = ModelConfig(conv_blocks=((1, 2),), fc_widths=(4,), small_side=8, large_side=8, dropout_rate=0.0)
    model = build_model(cfg, seed=3).to_float64()
    rng = np.random.default_rng(303)
    n = 6
    small, large = rng.normal(size=(n, 8, 8, 8)), rng.normal(size=(n, 8, 8, 8))
    feats = rng.normal(size=(n, 243))
    labels = np.array([1, 0, 1, 0, 0, 1], dtype=np.float64)
    analytic, numeric = finite_difference_gradients(model, small, large, feats, labels, w_pos=3.0, eps=1e-6)
    assert analytic.shape == numeric.shape == (count_parameters(model),)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-7)
    elapsed = time.time() - start
    print(f"\n{len(rel)} parameters, max relative error {rel.max():.2e}, {elapsed:.1f} s")
    assert rel.max() < 1e-4
    assert elapsed < 300


# 4 ---------------------------------------------------------------------------------

def _box_atlas_mean(atlas, center, side):
    lo, hi = patch_box(center, side)
    return float(atlas[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1].mean())


def _overlaps(a, b):
    return bool(np.all(a[0] <= b[1]) and np.all(b[0] <= a[1]))


def test_criterion_4_sampling_invariants():
    spec, cfg = PhantomSpec.quick(), SamplerConfig.quick()
    grid, lms = build_grid(), default_landmarks()
    subjects = [generate_subject(spec, 1 + s % 2, seed=derive_seed(404, s), subject_id=f"sub-{s:03d}")
                for s in range(100)]
    samplers = [SubjectSampler(r, cfg, grid, lms) for r in subjects]
    positives = [extract_positives(ss, seed=4) for ss in samplers]

    for ss, ext in zip(samplers, positives):
        assert not ext.skipped
        for sample, label in zip(ext.samples, ss.subject.labels):
            mask = rasterize_sphere(label, ss.subject.geometry)
            lo, hi = sample.small_box
            inside = mask[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1].sum()
            assert inside == mask.sum() > 0

    thresholds = compute_thresholds([s for ext in positives for s in ext.samples], cfg.threshold_percentile)
    n_draws = n_ok = 0
    for i, (ss, ext) in enumerate(zip(samplers, positives)):
        rng = np.random.default_rng(derive_seed(404, "negatives", i))
        atlas = ss.subject.atlas.intensities.astype(np.float64)
        random_means, matched_means = [], []
        for _ in range(cfg.negatives_per_subject):
            r = ss.negative_random(ext.regions, rng)
            m = ss.negative_matched(thresholds, ext.regions, rng)
            for neg in (r, m):
                for pos in ext.samples:
                    assert not _overlaps(neg.small_box, pos.small_box)
            random_means.append(_box_atlas_mean(atlas, r.pair.center_voxel, cfg.small_side))
            local = _box_atlas_mean(atlas, m.pair.center_voxel, cfg.small_side)
            matched_means.append(local)
            n_draws += 1
            n_ok += local >= thresholds.local_thr - 1e-12 and local / ss.mask_atlas_mean >= thresholds.global_thr - 1e-12
        assert np.mean(matched_means) > np.mean(random_means), ss.subject.id
    print(f"\nintensity-matched draws meeting both thresholds: {n_ok}/{n_draws}")
    assert n_ok / n_draws >= 0.95


# 5 ---------------------------------------------------------------------------------

def test_criterion_5_dataset_bookkeeping():
    # 226 sessions, 111 aneurysms: 70 sessions with one, 19 with two, 1 with three, 136 controls
    counts = [1] * 70 + [2] * 19 + [3] + [0] * 136
    assert len(counts) == 226 and sum(counts) == 111
    spec = PhantomSpec.quick()
    records = [generate_subject(spec, k, seed=derive_seed(505, i), subject_id=f"ses-{i:03d}")
               for i, k in enumerate(counts)]
    ds = sample_cohort(records, "random", seed=5, config=SamplerConfig.quick())
    n_pos = int(ds.labels.sum())
    n_neg = len(ds) - n_pos
    print(f"\n{n_pos} positives, {n_neg} negatives, ratio 1:{n_neg / n_pos:.1f}")
    assert (n_pos, n_neg) == (111, 1808)
    assert ds.info["skipped_positives"] == [] and ds.info["failures"] == []


# 6 ---------------------------------------------------------------------------------

def _tree_digest(directory: Path) -> dict[str, str]:
    return {str(p.relative_to(directory)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(directory.rglob("*")) if p.is_file() and p.name != "run.json"}


def test_criterion_6_determinism(tmp_path):
    cohort = tmp_path / "cohort"
    assert main(["phantom", "--quick", "--subjects", "12", "--prevalence", "0.4", "--seed", "6",
                 "--out", str(cohort)]) == 0
    digests = {}
    for run in ("a", "b"):
        for policy in ("random", "intensity-matched"):
            out = tmp_path / run / f"extract-{policy}"
            assert main(["extract", "--quick", "--cohort", str(cohort), "--policy", policy, "--seed", "66",
                         "--out", str(out)]) == 0
            digests[(run, policy)] = _tree_digest(out)
        out = tmp_path / run / "train"
        assert main(["train", "--quick", "--cohort", str(cohort), "--network", "informed", "--seed", "66",
                     "--set", "train.epochs=3", "--out", str(out)]) == 0
        digests[(run, "train")] = _tree_digest(out)
    for key in ("random", "intensity-matched", "train"):
        assert digests[("a", key)] == digests[("b", key)], key
        assert digests[("a", key)]
    assert "model.ckpt" in digests[("a", "train")]


# 7 ---------------------------------------------------------------------------------

TREND_SEED = 2024


def test_criterion_7_trend_check():
    start = time.time()
    cfg = PipelineConfig.quick(seed=TREND_SEED)
    assert cfg.cohort.n_subjects == 40 and cfg.experiment.n_repetitions == 10
    records = generate_records(cfg.cohort, cfg.phantom)
    report = run_experiment(records, cfg, progress=print)
    elapsed = time.time() - start

    auprs = {c: report.cells[c].auprs for c in report.cells}
    print(f"\nexperiment finished in {elapsed / 60:.1f} min")
    for c, vals in auprs.items():
        print(f"{c:<28} lr={report.cells[c].learning_rate:g} mean AUPR {np.mean(vals):.3f}  "
              + " ".join(f"{v:.3f}" for v in vals))
    assert all(v is not None for vals in auprs.values() for v in vals)

    for net in ("baseline", "informed"):
        assert report.mean(f"{net}:random") > report.mean(f"{net}:intensity_matched"), net
    wins = sum(a > b for a, b in zip(auprs["informed:intensity_matched"], auprs["baseline:intensity_matched"]))
    print(f"informed beats baseline on intensity-matched negatives in {wins}/10 repetitions")
    assert wins >= 7
    assert elapsed < 4 * 3600


# 8 ---------------------------------------------------------------------------------

def test_criterion_8_parameter_count_ratio():
    informed, baseline = ModelConfig(), ModelConfig().baseline()
    n_inf, n_base = count_parameters(informed), count_parameters(baseline)
    assert n_inf == count_parameters(build_model(informed))
    assert n_base == count_parameters(build_model(baseline))
    print(f"\ninformed {n_inf:,} / baseline {n_base:,} = {n_inf / n_base:.3f}")
    assert 1.8 <= n_inf / n_base <= 2.2
