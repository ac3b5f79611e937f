import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aneurysm_patchnet.errors import DomainError, ValidationError
from aneurysm_patchnet.features import (CENTER_SLICE, GRID_SLICE, LANDMARK_SLICE, N_FEATURES, LandmarkSet,
                                        UniformGrid, build_grid, default_landmarks, load_landmarks,
                                        spatial_features, spatial_features_batch)


def test_grid_has_216_points():
    g = build_grid()
    assert g.points.shape == (216, 3) and g.n_per_axis == 6


def test_grid_two_per_axis_is_corners():
    g = build_grid(((0, 0, 0), (1, 1, 1)), 2)
    corners = {(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)}
    assert {tuple(p) for p in g.points.tolist()} == corners


def test_grid_midpoint():
    g = build_grid(((0, 0, 0), (2, 2, 2)), 3)
    assert [1.0, 1.0, 1.0] in g.points.tolist()


def test_grid_lexicographic_order():
    g = build_grid(((0, 0, 0), (1, 2, 3)), 2)
    assert g.points.tolist() == [[0, 0, 0], [0, 0, 3], [0, 2, 0], [0, 2, 3],
                                 [1, 0, 0], [1, 0, 3], [1, 2, 0], [1, 2, 3]]


def test_grid_includes_faces_and_even_spacing():
    g = build_grid(((-5, 0, 2), (5, 10, 4)), 6)
    for axis in range(3):
        vals = np.unique(g.points[:, axis])
        assert len(vals) == 6
        assert np.allclose(np.diff(vals), np.diff(vals)[0])
    assert g.points.min(axis=0).tolist() == [-5, 0, 2]
    assert g.points.max(axis=0).tolist() == [5, 10, 4]


@pytest.mark.parametrize("bbox,n", [(((0, 0, 0), (0, 1, 1)), 6), (((0, 0, 0), (1, 1, 1)), 1),
                                    (((1, 0, 0), (0, 1, 1)), 6)])
def test_grid_degenerate(bbox, n):
    with pytest.raises(DomainError):
        build_grid(bbox, n)


def test_vector_length_and_layout(grid, landmarks):
    c = np.array([1.0, -2.0, 3.5])
    d = spatial_features(c, grid, landmarks)
    assert d.shape == (N_FEATURES,) == (243,)
    assert 3 + 216 + 24 == 243
    assert d[CENTER_SLICE].tolist() == c.tolist()
    assert (GRID_SLICE.start, GRID_SLICE.stop) == (3, 219)
    assert (LANDMARK_SLICE.start, LANDMARK_SLICE.stop) == (219, 243)


def test_three_four_five(landmarks):
    pts = np.zeros((8, 3))
    pts[5] = (3, 4, 0)
    g = UniformGrid(pts, 2, ((0, 0, 0), (1, 1, 1)))
    d = spatial_features((0, 0, 0), g, landmarks)
    assert d[3 + 5] == 5.0


def test_zero_distance_at_landmark(grid, landmarks):
    for j, p in enumerate(landmarks.points):
        assert spatial_features(p, grid, landmarks)[219 + j] == 0.0


def test_non_finite_center_rejected(grid, landmarks):
    with pytest.raises(DomainError):
        spatial_features((0, np.nan, 0), grid, landmarks)


def test_batch_matches_single(grid, landmarks, rng):
    centers = rng.uniform(-50, 50, (7, 3))
    batch = spatial_features_batch(centers, grid, landmarks)
    for c, row in zip(centers, batch):
        assert np.array_equal(row, spatial_features(c, grid, landmarks))


finite = st.floats(-200, 200, allow_nan=False)


@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite))
@settings(max_examples=200, deadline=None)
def test_translation_properties(c, t):
    lm = default_landmarks()
    g = build_grid()
    d = spatial_features(c, g, lm)
    shifted = spatial_features(c + t, UniformGrid(g.points + t, 6, g.bounding_box),
                               LandmarkSet(lm.points + t, lm.names, lm.location_tags))
    assert np.allclose(shifted[:3], d[:3] + t, rtol=0, atol=1e-12 * (1 + np.abs(t).max()))
    assert np.allclose(shifted[3:], d[3:], rtol=0, atol=1e-9)
    assert np.all(d[3:] >= 0)


@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite))
@settings(max_examples=100, deadline=None)
def test_triangle_inequality(c, ref):
    lm = default_landmarks()
    g = build_grid()
    d = spatial_features(c, g, lm)
    refs = np.vstack([g.points, lm.points])
    lhs = d[3:]
    rhs = np.linalg.norm(c - ref) + np.linalg.norm(refs - ref, axis=1)
    assert np.all(lhs <= rhs + 1e-9)


def test_pure_function(grid, landmarks):
    c = (12.25, -7.5, 3.125)
    assert spatial_features(c, grid, landmarks).tobytes() == spatial_features(c, grid, landmarks).tobytes()


def test_shipped_landmarks():
    lm = default_landmarks()
    assert len(lm) == 24 and len(set(lm.names)) == 24


def _write(tmp_path, entries):
    p = tmp_path / "lm.json"
    p.write_text(json.dumps(entries))
    return p


def _entries(n):
    return [{"name": f"p{i}", "mni_mm": [float(i), 0.0, 0.0]} for i in range(n)]


def test_load_landmarks_file(tmp_path):
    lm = load_landmarks(_write(tmp_path, _entries(24)))
    assert lm.points.shape == (24, 3) and lm.names[3] == "p3"


def test_load_landmarks_wrong_count(tmp_path):
    with pytest.raises(ValidationError, match="24.*23"):
        load_landmarks(_write(tmp_path, _entries(23)))


def test_load_landmarks_duplicate(tmp_path):
    e = _entries(24)
    e[5]["mni_mm"] = e[4]["mni_mm"]
    with pytest.raises(ValidationError, match="duplicate"):
        load_landmarks(_write(tmp_path, e))


def test_load_landmarks_non_finite(tmp_path):
    e = _entries(24)
    e[0]["mni_mm"] = [float("inf"), 0, 0]
    p = tmp_path / "lm.json"
    p.write_text(json.dumps(e))  # json writes Infinity, which Python reads back
    with pytest.raises(ValidationError, match="finite"):
        load_landmarks(p)


def test_load_landmarks_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_landmarks(tmp_path / "absent.json")
