"""Subject-level nested stratified cross-validation plans."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .seeding import derive_rng


@dataclass(frozen=True)
class FoldPlan:
    """Outer test folds and, per outer fold, inner validation folds of its training subjects."""

    outer_folds: tuple[tuple[str, ...], ...]
    inner_folds: tuple[tuple[tuple[str, ...], ...], ...]
    seed: int

    @property
    def subjects(self) -> tuple[str, ...]:
        return tuple(sorted(s for fold in self.outer_folds for s in fold))

    def outer_test(self, k: int) -> tuple[str, ...]:
        return self.outer_folds[k]

    def outer_train(self, k: int) -> tuple[str, ...]:
        return tuple(s for j, fold in enumerate(self.outer_folds) if j != k for s in fold)

    def inner_val(self, k: int, j: int) -> tuple[str, ...]:
        return self.inner_folds[k][j]

    def inner_train(self, k: int, j: int) -> tuple[str, ...]:
        return tuple(s for i, fold in enumerate(self.inner_folds[k]) if i != j for s in fold)

    def to_json(self) -> dict:
        return {"seed": self.seed, "outer_folds": [list(f) for f in self.outer_folds],
                "inner_folds": [[list(f) for f in inner] for inner in self.inner_folds]}


def stratified_folds(subjects: Sequence[str], positive: Mapping[str, bool], n_folds: int,
                     rng: np.random.Generator) -> tuple[tuple[str, ...], ...]:
    """Deal shuffled positives, then shuffled negatives, round-robin into ``n_folds`` folds."""
    pos = [s for s in subjects if positive[s]]
    neg = [s for s in subjects if not positive[s]]
    if len(pos) < n_folds or len(neg) < n_folds:
        raise ValidationError(
            f"need at least {n_folds} subjects of each class to stratify, "
            f"got {len(pos)} positive and {len(neg)} negative")
    pos = [pos[i] for i in rng.permutation(len(pos))]
    neg = [neg[i] for i in rng.permutation(len(neg))]
    folds: list[list[str]] = [[] for _ in range(n_folds)]
    for i, s in enumerate(pos + neg):
        folds[i % n_folds].append(s)
    return tuple(tuple(sorted(f)) for f in folds)


def plan_nested_cv(positive: Mapping[str, bool], n_outer: int = 5, n_inner: int = 3,
                   seed: int = 0) -> FoldPlan:
    """Nested stratified plan over subjects; ``positive`` maps subject id to positivity."""
    subjects = sorted(positive)
    outer = stratified_folds(subjects, positive, n_outer, derive_rng(seed, "outer"))
    inner = []
    for k in range(n_outer):
        train = sorted(s for j, f in enumerate(outer) if j != k for s in f)
        inner.append(stratified_folds(train, positive, n_inner, derive_rng(seed, "inner", k)))
    return FoldPlan(outer, tuple(inner), seed)


def positivity(records) -> dict[str, bool]:
    """Subject id to positivity for records or a cohort manifest document."""
    if isinstance(records, Mapping) and "subjects" in records:
        return {sid: bool(e.get("labels")) for sid, e in records["subjects"].items()}
    return {r.id: r.is_positive for r in records}
