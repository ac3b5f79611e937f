"""Brute-force reference implementations used as test oracles."""
import itertools
from fractions import Fraction

import numpy as np


def pairwise_auc(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly, ties counting one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def threshold_average_precision(scores, labels):
    """Walk every distinct score as a cut (score >= t), highest first."""
    n_pos = sum(labels)
    prev_recall = 0.0
    area = 0.0
    for t in sorted(set(scores), reverse=True):
        called = [y for s, y in zip(scores, labels) if s >= t]
        tp = sum(called)
        recall = tp / n_pos
        area += (recall - prev_recall) * (tp / len(called))
        prev_recall = recall
    return area


def signed_rank_enumeration(d):
    """Exact two-sided p by listing all 2^n sign patterns of the nonzero |d| ranks."""
    d = [x for x in d if x != 0]
    mags = sorted(abs(x) for x in d)
    ranks = {}
    for m in set(mags):
        idx = [i + 1 for i, v in enumerate(mags) if v == m]
        ranks[m] = Fraction(sum(idx), len(idx))
    r = [ranks[abs(x)] for x in d]
    w = sum(ri for ri, x in zip(r, d) if x > 0)
    le = ge = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        s = sum(ri for ri, b in zip(r, signs) if b)
        le += s <= w
        ge += s >= w
    total = 2 ** len(d)
    return float(w), min(1.0, 2 * min(le, ge) / total)


def random_instance(rng, n_max=20, tie_levels=None):
    n = int(rng.integers(2, n_max + 1))
    labels = rng.integers(0, 2, n)
    labels[rng.integers(n)] = 1
    if tie_levels:
        scores = rng.integers(0, tie_levels, n) / tie_levels
    else:
        scores = rng.random(n)
    return scores, labels
