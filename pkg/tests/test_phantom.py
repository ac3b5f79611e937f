import json

import numpy as np
import pytest

from aneurysm_patchnet.errors import GenerationError, ValidationError
from aneurysm_patchnet.phantom import (DEFAULT_LOCATION_WEIGHTS, LOCATION_COUNTS, CohortSpec, PhantomSpec,
                                       cohort_plan, generate_cohort, generate_subject)
from aneurysm_patchnet.volumes import equivalent_diameter, load_cohort, rasterize_sphere


def test_location_counts_total():
    assert sum(LOCATION_COUNTS.values()) == 111
    assert LOCATION_COUNTS["MCA"] == 22 and LOCATION_COUNTS["ACOM"] == 20
    assert abs(sum(DEFAULT_LOCATION_WEIGHTS.values()) - 1) < 1e-12


def test_spec_validation():
    with pytest.raises(ValidationError):
        PhantomSpec(landmark_placement_weights={"MCA": 0.5})
    with pytest.raises(ValidationError):
        PhantomSpec(aneurysm_diameter_range_vox=(1.0, 5.0))
    with pytest.raises(ValidationError):
        PhantomSpec(aneurysm_diameter_range_vox=(3.0, 28.0))  # above 0.92 * 30
    with pytest.raises(ValidationError):
        CohortSpec(prevalence=1.5)
    with pytest.raises(ValidationError):
        CohortSpec(n_subjects=0)


def test_spec_json_round_trip():
    spec = PhantomSpec.quick()
    assert PhantomSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec


def test_deterministic(quick_spec):
    a = generate_subject(quick_spec, 1, seed=5)
    b = generate_subject(quick_spec, 1, seed=5)
    assert a.volume.intensities.tobytes() == b.volume.intensities.tobytes()
    assert a.atlas.intensities.tobytes() == b.atlas.intensities.tobytes()
    assert a.labels == b.labels
    c = generate_subject(quick_spec, 1, seed=6)
    assert a.volume.intensities.tobytes() != c.volume.intensities.tobytes()


def test_control_subject(control_subject):
    assert control_subject.labels == ()
    assert control_subject.atlas.intensities.max() == 1.0
    assert control_subject.atlas.intensities[control_subject.brain_mask].mean() > 0


def test_record_invariants(positive_subject):
    r = positive_subject
    assert r.is_positive and len(r.labels) == 2
    assert np.array_equal(r.subject_to_canonical, np.eye(4))
    assert 0 <= r.atlas.intensities.min() and r.atlas.intensities.max() <= 1
    assert all(lab.location_tag in LOCATION_COUNTS for lab in r.labels)
    masks = [rasterize_sphere(lab, r.geometry) for lab in r.labels]
    assert not np.any(masks[0] & masks[1])


def test_negative_count_rejected(quick_spec):
    with pytest.raises(ValidationError):
        generate_subject(quick_spec, -1, seed=0)


def test_impossible_placement_raises():
    spec = PhantomSpec.quick()
    with pytest.raises(GenerationError):
        generate_subject(spec, 400, seed=0, max_retries=5)


def test_label_contrast_on_default_phantoms():
    spec = PhantomSpec()
    for seed in range(20):
        r = generate_subject(spec, 1, seed=100 + seed)
        mask = rasterize_sphere(r.labels[0], r.geometry)
        inside = r.volume.intensities[mask].mean()
        brain = r.volume.intensities[r.brain_mask].mean()
        assert inside > brain + 3 * spec.background_noise_sigma


def test_diameters_within_range_and_fit():
    spec = PhantomSpec()
    lo, hi = spec.aneurysm_diameter_range_vox
    below = total = 0
    for seed in range(40):
        r = generate_subject(spec, 1, seed=seed)
        d_label = equivalent_diameter(rasterize_sphere(r.labels[0], r.geometry))
        total += 1
        below += d_label < 30
        # the bulge is the label minus its margin, so the label is at least the minimum diameter
        assert d_label >= lo
    assert below / total >= 0.92


def test_atlas_zero_outside_vessels(positive_subject):
    # atlas is the noiseless vessel map: zero on most of the volume, including the corners
    a = positive_subject.atlas.intensities
    assert a[0, 0, 0] == 0 and (a == 0).mean() > 0.5


def test_cohort_rounding():
    assert CohortSpec(214, 83 / 214).n_positive == 83
    assert CohortSpec(1, 1.0).n_positive == 1
    assert CohortSpec(40, 0.4, seed=7).n_positive == 16


def test_cohort_plan_counts():
    plan = cohort_plan(CohortSpec(214, 83 / 214, seed=1))
    pos = [n for _, n, _ in plan if n > 0]
    assert len(plan) == 214 and len(pos) == 83
    assert set(pos) <= {1, 2}
    assert len({sid for sid, _, _ in plan}) == 214


def test_generate_cohort_on_disk(tmp_path, quick_spec):
    path = generate_cohort(CohortSpec(6, 0.5, seed=2), quick_spec, tmp_path / "c")
    doc = json.loads(path.read_text())
    assert len(doc["subjects"]) == 6 and doc["metadata"]["n_positive"] == 3
    records = load_cohort(path)
    assert sum(r.is_positive for r in records) == 3


def test_minimal_cohort(tmp_path, quick_spec):
    path = generate_cohort(CohortSpec(1, 1.0), quick_spec, tmp_path)
    (rec,) = load_cohort(path)
    assert rec.is_positive


def test_parallel_matches_serial(tmp_path, quick_spec):
    spec = CohortSpec(4, 0.5, seed=9)
    a = load_cohort(generate_cohort(spec, quick_spec, tmp_path / "a", jobs=1))
    b = load_cohort(generate_cohort(spec, quick_spec, tmp_path / "b", jobs=2))
    for x, y in zip(a, b):
        assert x.volume.intensities.tobytes() == y.volume.intensities.tobytes()
        assert x.labels == y.labels
