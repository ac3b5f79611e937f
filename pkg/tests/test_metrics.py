import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aneurysm_patchnet.errors import DomainError, ValidationError
from aneurysm_patchnet.metrics import (confusion_metrics, evaluate, pr_auc, precision_recall_points, roc_auc,
                                       wilcoxon_signed_rank)

from .oracles import pairwise_auc, random_instance, signed_rank_enumeration, threshold_average_precision


def test_confusion_examples():
    r = confusion_metrics([0.9, 0.1], [1, 0])
    assert (r.acc, r.sens, r.spec) == (100.0, 100.0, 100.0)
    assert confusion_metrics([0.9, 0.1], [0, 1]).acc == 0.0
    r = confusion_metrics([0.9, 0.1], [0, 0])
    assert r.sens is None and r.ppv is None and r.spec == 50.0


def test_threshold_is_strict():
    r = confusion_metrics([0.5, 0.5], [1, 0])
    assert r.tp == 0 and r.fn == 1 and r.tn == 1


def test_confusion_validation():
    with pytest.raises(ValidationError):
        confusion_metrics([0.5], [2])
    with pytest.raises(ValidationError):
        confusion_metrics([], [])
    with pytest.raises(ValidationError):
        confusion_metrics([0.1, 0.2], [1])


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_rates_bounded_and_counts_consistent(rows):
    s, y = zip(*rows)
    r = confusion_metrics(s, y)
    assert r.tp + r.fp + r.tn + r.fn == len(rows)
    assert r.n_pos == sum(y)
    for v in (r.acc, r.sens, r.spec, r.ppv, r.npv):
        assert v is None or 0 <= v <= 100


def test_roc_examples():
    assert roc_auc([0.2, 0.9], [0, 1]) == 1.0
    assert roc_auc([0.2, 0.9], [1, 0]) == 0.0
    assert roc_auc([0.1, 0.2, 0.3, 0.4], [0, 1, 0, 1]) == pytest.approx(0.75, abs=1e-12)
    assert roc_auc([0.5, 0.5], [0, 1]) == 0.5
    with pytest.raises(DomainError):
        roc_auc([0.1, 0.2], [1, 1])


def test_pr_examples():
    assert pr_auc([0.2, 0.9, 0.1], [0, 1, 0]) == 1.0
    assert pr_auc([0.9, 0.1], [0, 1]) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(DomainError):
        pr_auc([0.1, 0.2], [0, 0])


def test_pr_random_scores_match_prevalence():
    rng = np.random.default_rng(0)
    y = (rng.random(10_000) < 0.1).astype(int)
    assert abs(pr_auc(rng.random(10_000), y) - 0.1) < 0.02


def test_pr_points_shape():
    recall, precision, thr = precision_recall_points([0.9, 0.9, 0.2, 0.1], [1, 0, 1, 0])
    assert list(thr) == [0.9, 0.2, 0.1]
    assert recall[-1] == 1.0 and precision[0] == 0.5


@pytest.mark.parametrize("ties", [None, 4])
def test_areas_match_oracles(ties):
    rng = np.random.default_rng(ties or 1)
    for _ in range(500):
        s, y = random_instance(rng, tie_levels=ties)
        assert pr_auc(s, y) == pytest.approx(threshold_average_precision(list(s), list(y)), abs=1e-9)
        if 0 < y.sum() < len(y):
            assert roc_auc(s, y) == pytest.approx(pairwise_auc(list(s), list(y)), abs=1e-9)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["cube", "exp", "affine"]))
@settings(max_examples=100, deadline=None)
def test_areas_invariant_under_monotone_maps(seed, kind):
    rng = np.random.default_rng(seed)
    s, y = random_instance(rng, tie_levels=5)
    if y.sum() == len(y):
        y[0] = 0
    f = {"cube": lambda v: v ** 3, "exp": np.exp, "affine": lambda v: 3 * v - 7}[kind]
    assert roc_auc(f(s), y) == pytest.approx(roc_auc(s, y), abs=1e-12)
    assert pr_auc(f(s), y) == pytest.approx(pr_auc(s, y), abs=1e-12)


def test_evaluate_fills_areas():
    r = evaluate([0.9, 0.2, 0.7, 0.1], [1, 0, 1, 0])
    assert r.auroc == 1.0 and r.aupr == 1.0 and r.acc == 100.0
    r = evaluate([0.9, 0.2], [0, 0])
    assert r.auroc is None and r.aupr is None


def test_wilcoxon_examples():
    r = wilcoxon_signed_rank(np.arange(1, 11) + 0.5, np.zeros(10))
    assert r.statistic == 55 and r.p_value == pytest.approx(2 / 2 ** 10, abs=1e-15)
    r = wilcoxon_signed_rank([1, -2, 3])
    assert r.statistic == 4 and r.p_value == pytest.approx(0.75, abs=1e-15)
    with pytest.raises(DomainError):
        wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])
    with pytest.raises(ValidationError):
        wilcoxon_signed_rank([1, 2], [1])


def test_wilcoxon_drops_zeros():
    assert wilcoxon_signed_rank([0, 0, 1, -2, 3]) == wilcoxon_signed_rank([1, -2, 3])


@pytest.mark.parametrize("ties", [None, 3])
def test_wilcoxon_matches_enumeration(ties):
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 11))
        d = rng.integers(-ties, ties + 1, n) if ties else rng.normal(size=n)
        if not np.any(d):
            continue
        w, p = signed_rank_enumeration(list(d))
        r = wilcoxon_signed_rank(d)
        assert r.statistic == w
        assert abs(r.p_value - p) <= 1e-12


def test_wilcoxon_large_n_runs():
    r = wilcoxon_signed_rank(np.linspace(-1, 2, 25))
    assert 0 <= r.p_value <= 1 and not math.isnan(r.statistic)
