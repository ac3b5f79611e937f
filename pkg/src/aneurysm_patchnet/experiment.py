"""The four-cell experiment: {baseline, informed} x {random, intensity-matched}.

Learning rates are selected once per cell with a nested stratified CV
(inner folds rank the candidate rates by mean validation AUPR; the cell
keeps the rate chosen most often across outer folds). The cell is then
re-run ``n_repetitions`` times, each with a freshly seeded subject-level
fold plan and freshly sampled patches. Within a repetition the baseline
and informed models see exactly the same test samples, and each
repetition yields one AUPR per cell from the pooled outer-fold predictions.
Paired AUPR sequences are compared with exact Wilcoxon signed-rank tests.

Intensity-matched thresholds are always derived from the positives of the
training subjects of the split at hand.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from collections import Counter, OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import PipelineConfig, dump_config, to_json
from .crossval import FoldPlan, plan_nested_cv, positivity
from .errors import DomainError, PatchNetError
from .metrics import MetricsReport, evaluate, pr_auc, wilcoxon_signed_rank
from .model import build_model, predict, train
from .sampler import PatchDataset, sample_cohort
from .seeding import derive_seed
from .volumes import SubjectRecord

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("acc", "sens", "spec", "ppv", "npv", "auroc", "aupr")


class ExperimentError(PatchNetError, RuntimeError):
    """A cell failed in more than one repetition."""


@dataclass
class CellResult:
    cell: str
    learning_rate: float | None = None
    selection: dict = field(default_factory=dict)
    repetitions: list[MetricsReport | None] = field(default_factory=list)
    folds: list[list[MetricsReport | None]] = field(default_factory=list)
    test_ids: list[list[str]] = field(default_factory=list)
    scores: list[list[float]] = field(default_factory=list)
    labels: list[list[int]] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def auprs(self) -> list[float | None]:
        return [m.aupr if m is not None else None for m in self.repetitions]


@dataclass
class ExperimentReport:
    config: dict
    cells: dict[str, CellResult]
    plans: list[dict]
    wilcoxon: dict[str, dict]
    elapsed_s: float = 0.0

    def mean(self, cell: str, metric: str = "aupr") -> float:
        vals = [getattr(m, metric) for m in self.cells[cell].repetitions if m is not None]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_json(self) -> dict:
        cells = {}
        for name, c in self.cells.items():
            cells[name] = {
                "learning_rate": c.learning_rate, "selection": c.selection,
                "repetitions": [m.to_json() if m else None for m in c.repetitions],
                "folds": [[m.to_json() if m else None for m in rep] for rep in c.folds],
                "test_ids": c.test_ids, "scores": c.scores, "labels": c.labels,
                "failures": c.failures,
            }
        return {"config": self.config, "cells": cells, "plans": self.plans,
                "wilcoxon": self.wilcoxon, "elapsed_s": self.elapsed_s}


# --------------------------------------------------------------------------
# jobs

class _Context:
    """Per-process state: cohort records, config and a small dataset cache."""

    def __init__(self, records: Sequence[SubjectRecord], config: PipelineConfig):
        self.records = list(records)
        self.config = config
        self.grid = config.features.grid()
        self.landmarks = config.features.landmark_set()
        self._cache: OrderedDict = OrderedDict()

    def dataset(self, sample_seed: int, policy: str, threshold_subjects) -> PatchDataset:
        key = (sample_seed, policy, tuple(sorted(threshold_subjects)) if policy == "intensity_matched" else None)
        if key not in self._cache:
            self._cache[key] = sample_cohort(
                self.records, policy, sample_seed, self.config.sampler, self.grid, self.landmarks,
                threshold_subjects=threshold_subjects)
            while len(self._cache) > 3:
                self._cache.popitem(last=False)
        self._cache.move_to_end(key)
        return self._cache[key]


_WORKER: _Context | None = None


def _init_worker(records, config):
    global _WORKER
    import torch
    torch.set_num_threads(1)
    _WORKER = _Context(records, config)


@dataclass(frozen=True)
class FitJob:
    network: str
    policy: str
    sample_seed: int
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    eval_ids: tuple[str, ...]
    threshold_ids: tuple[str, ...]
    learning_rate: float
    train_seed: int


def _fit_and_score(ctx: _Context, job: FitJob):
    cfg = ctx.config
    ds = ctx.dataset(job.sample_seed, job.policy, job.threshold_ids)
    model = build_model(cfg.model_config(job.network), job.train_seed)
    tc = replace(cfg.train, learning_rate=job.learning_rate, seed=job.train_seed)
    train(model, ds.for_subjects(job.train_ids), ds.for_subjects(job.val_ids), tc, cfg.augmentation)
    ev = ds.for_subjects(job.eval_ids)
    return ev.ids, ev.labels.tolist(), predict(model, ev).tolist()


def _run_job(job: FitJob):
    try:
        return _fit_and_score(_WORKER, job), None
    except PatchNetError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _execute(jobs: list[FitJob], ctx: _Context, n_workers: int, records, config):
    global _WORKER
    if n_workers <= 1:
        _WORKER = ctx
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(n_workers, initializer=_init_worker, initargs=(records, config)) as pool:
        return list(pool.map(_run_job, jobs))


# --------------------------------------------------------------------------
# stages

def _split_cell(cell: str) -> tuple[str, str]:
    network, policy = cell.split(":")
    return network, policy


def select_learning_rates(ctx: _Context, plan: FoldPlan, cells: Sequence[str], sample_seed: int,
                          n_workers: int = 1, progress: Callable[[str], None] | None = None) -> dict:
    """Nested-CV learning-rate selection; returns per-cell selection records.

    Each inner split trains on its inner-training subjects, early-stops on
    and is scored on the inner-validation fold.
    """
    cfg = ctx.config
    rates = tuple(cfg.experiment.learning_rates)
    out = {}
    for cell in cells:
        network, policy = _split_cell(cell)
        if len(rates) == 1:
            out[cell] = {"per_fold": [rates[0]] * len(plan.outer_folds), "inner_aupr": {}, "chosen": rates[0]}
            continue
        jobs, keys = [], []
        for k in range(len(plan.outer_folds)):
            for j in range(len(plan.inner_folds[k])):
                for lr in rates:
                    jobs.append(FitJob(network, policy, sample_seed, plan.inner_train(k, j), plan.inner_val(k, j),
                                       plan.inner_val(k, j), plan.inner_train(k, j), lr,
                                       derive_seed(cfg.seed, "select", cell, k, j, lr)))
                    keys.append((k, j, lr))
        results = _execute(jobs, ctx, n_workers, ctx.records, cfg)
        scores: dict = {}
        for (k, j, lr), (res, err) in zip(keys, results):
            value = float("nan")
            if res is not None:
                _, labels, probs = res
                if sum(labels) > 0:
                    value = pr_auc(probs, labels)
            scores.setdefault(k, {}).setdefault(lr, []).append(value)
        per_fold, inner = [], {}
        for k in sorted(scores):
            means = {lr: float(np.nanmean(v)) if not np.all(np.isnan(v)) else -1.0 for lr, v in scores[k].items()}
            inner[str(k)] = {str(lr): m for lr, m in means.items()}
            per_fold.append(max(rates, key=lambda lr: (means[lr], -rates.index(lr))))
        counts = Counter(per_fold)
        top = max(counts.values())
        tied = [lr for lr in rates if counts.get(lr, 0) == top]
        chosen = max(tied, key=lambda lr: np.mean([inner[str(k)][str(lr)] for k in range(len(per_fold))]))
        out[cell] = {"per_fold": per_fold, "inner_aupr": inner, "chosen": chosen}
        if progress:
            progress(f"event=select cell={cell} per_fold={per_fold} chosen={chosen}")
    return out


def run_repetition(ctx: _Context, plan: FoldPlan, rep: int, cells: Sequence[str], rates: dict,
                   n_workers: int = 1):
    """Train/test every outer fold of one repetition; returns per-cell pooled predictions."""
    cfg = ctx.config
    sample_seed = derive_seed(cfg.seed, "rep-sampling", rep)
    jobs, keys = [], []
    for cell in cells:
        network, policy = _split_cell(cell)
        for k in range(len(plan.outer_folds)):
            jobs.append(FitJob(network, policy, sample_seed, plan.inner_train(k, 0), plan.inner_val(k, 0),
                               plan.outer_test(k), plan.outer_train(k), rates[cell],
                               derive_seed(cfg.seed, "rep-train", rep, k, policy, network)))
            keys.append((cell, k))
    results = _execute(jobs, ctx, n_workers, ctx.records, cfg)
    per_cell: dict = {c: [None] * len(plan.outer_folds) for c in cells}
    errors: dict = {c: [] for c in cells}
    for (cell, k), (res, err) in zip(keys, results):
        per_cell[cell][k] = res
        if err:
            errors[cell].append(f"rep {rep} fold {k}: {err}")
    return per_cell, errors


def _paired(a: list, b: list):
    pairs = [(x, y) for x, y in zip(a, b) if x is not None and y is not None]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def compare(report_cells: dict[str, CellResult]) -> dict[str, dict]:
    """Wilcoxon tests: random vs IM per network, baseline vs informed per policy."""
    out = {}
    pairs = []
    for net in ("baseline", "informed"):
        pairs.append((f"{net}:random", f"{net}:intensity_matched"))
    for pol in ("random", "intensity_matched"):
        pairs.append((f"informed:{pol}", f"baseline:{pol}"))
    for a, b in pairs:
        if a not in report_cells or b not in report_cells:
            continue
        x, y = _paired(report_cells[a].auprs, report_cells[b].auprs)
        key = f"{a} vs {b}"
        if not x:
            out[key] = {"error": "no paired repetitions"}
            continue
        try:
            res = wilcoxon_signed_rank(x, y)
            out[key] = {**res.to_json(), "mean_a": float(np.mean(x)), "mean_b": float(np.mean(y)),
                        "wins_a": int(sum(p > q for p, q in zip(x, y)))}
        except DomainError as exc:
            out[key] = {"error": str(exc)}
    return out


def run_experiment(records: Sequence[SubjectRecord], config: PipelineConfig,
                   out_dir: str | os.PathLike | None = None,
                   progress: Callable[[str], None] | None = None) -> ExperimentReport:
    """Run the selected cells of the experiment matrix on an in-memory cohort."""
    start = time.time()
    settings = config.experiment
    cells = list(settings.cells)
    ctx = _Context(records, config)
    positive = positivity(records)
    results = {c: CellResult(c) for c in cells}
    plans = []
    n_workers = config.jobs

    def persist():
        report = ExperimentReport(to_json(config), results, plans, compare(results), time.time() - start)
        if out_dir is not None:
            write_report(report, out_dir, plots=False)
        return report

    selection = None
    if not settings.reselect_each_repetition:
        sel_plan = plan_nested_cv(positive, settings.n_outer, settings.n_inner, derive_seed(config.seed, "selection"))
        selection = select_learning_rates(ctx, sel_plan, cells, derive_seed(config.seed, "selection-sampling"),
                                          n_workers, progress)
        for c in cells:
            results[c].selection = selection[c]
            results[c].learning_rate = selection[c]["chosen"]

    for rep in range(settings.n_repetitions):
        plan = plan_nested_cv(positive, settings.n_outer, settings.n_inner, derive_seed(config.seed, "plan", rep))
        plans.append(plan.to_json())
        if settings.reselect_each_repetition:
            sel = select_learning_rates(ctx, plan, cells, derive_seed(config.seed, "rep-sampling", rep),
                                        n_workers, progress)
            for c in cells:
                results[c].selection.setdefault("per_repetition", []).append(sel[c])
            rates = {c: sel[c]["chosen"] for c in cells}
        else:
            rates = {c: results[c].learning_rate for c in cells}
        per_cell, errors = run_repetition(ctx, plan, rep, cells, rates, n_workers)
        for c in cells:
            res = results[c]
            folds = per_cell[c]
            res.failures.extend(errors[c])
            if any(f is None for f in folds):
                res.repetitions.append(None)
                res.folds.append([None] * len(folds))
                res.test_ids.append([])
                res.scores.append([])
                res.labels.append([])
            else:
                ids = [i for f in folds for i in f[0]]
                labels = [l for f in folds for l in f[1]]
                scores = [s for f in folds for s in f[2]]
                res.repetitions.append(evaluate(scores, labels, settings.decision_threshold))
                res.folds.append([evaluate(f[2], f[1], settings.decision_threshold) for f in folds])
                res.test_ids.append(ids)
                res.scores.append(scores)
                res.labels.append(labels)
            failed_reps = sum(m is None for m in res.repetitions)
            if failed_reps > 1:
                persist()
                raise ExperimentError(f"cell {c} failed in {failed_reps} repetitions: {res.failures[:3]}")
        if progress:
            summary = " ".join(f"{c}={results[c].auprs[-1]:.3f}" if results[c].auprs[-1] is not None
                               else f"{c}=failed" for c in cells)
            progress(f"event=repetition rep={rep} {summary}")
    report = ExperimentReport(to_json(config), results, plans, compare(results), time.time() - start)
    if out_dir is not None:
        write_report(report, out_dir, plots=settings.plots)
    return report


# --------------------------------------------------------------------------
# persistence

def _fmt(v):
    return "" if v is None else (f"{v:.6g}" if isinstance(v, float) else v)


def write_report(report: ExperimentReport, out_dir: str | os.PathLike, plots: bool = True) -> Path:
    """Write ``report.json``, ``results.csv`` (per fold), ``summary.csv`` (per repetition) and plots."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_json(), indent=1))
    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["network", "negatives", "repetition", "outer_fold", "learning_rate", *TABLE_COLUMNS,
                    "n_pos", "n_neg"])
        for name, c in report.cells.items():
            net, pol = _split_cell(name)
            for r, folds in enumerate(c.folds):
                for k, m in enumerate(folds):
                    if m is None:
                        continue
                    w.writerow([net, pol, r, k, _fmt(c.learning_rate), *[_fmt(getattr(m, col)) for col in TABLE_COLUMNS],
                                m.n_pos, m.n_neg])
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["network", "negatives", "repetition", *TABLE_COLUMNS, "n_pos", "n_neg"])
        for name, c in report.cells.items():
            net, pol = _split_cell(name)
            for r, m in enumerate(c.repetitions):
                if m is not None:
                    w.writerow([net, pol, r, *[_fmt(getattr(m, col)) for col in TABLE_COLUMNS], m.n_pos, m.n_neg])
    if plots:
        plot_curves(report, out_dir / "curves.png")
    return out_dir / "report.json"


def load_report(path: str | os.PathLike) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return json.loads(path.read_text())


def summary_table(doc: dict) -> str:
    """Table-3-style text summary (means over repetitions) of a report document."""
    lines = [f"{'network':<10} {'negatives':<18} {'lr':>8} " + " ".join(f"{c:>7}" for c in TABLE_COLUMNS)]
    for name, c in doc["cells"].items():
        net, pol = _split_cell(name)
        reps = [m for m in c["repetitions"] if m]
        vals = []
        for col in TABLE_COLUMNS:
            xs = [m[col] for m in reps if m[col] is not None]
            vals.append(f"{np.mean(xs):7.3f}" if xs else f"{'-':>7}")
        lr = c.get("learning_rate")
        lines.append(f"{net:<10} {pol:<18} {lr if lr is not None else '-':>8} " + " ".join(vals))
    lines.append("")
    for key, res in doc.get("wilcoxon", {}).items():
        if "error" in res:
            lines.append(f"{key}: {res['error']}")
        else:
            lines.append(f"{key}: W+={res['statistic']:g} p={res['p_value']:.4f} "
                         f"(mean AUPR {res['mean_a']:.3f} vs {res['mean_b']:.3f}, wins {res['wins_a']}/{res['n']})")
    return "\n".join(lines)


def plot_curves(report: ExperimentReport, path: str | os.PathLike) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .metrics import precision_recall_points

    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for name, c in report.cells.items():
        for r, (scores, labels) in enumerate(zip(c.scores, c.labels)):
            if not scores or sum(labels) == 0 or sum(labels) == len(labels):
                continue
            s, y = np.asarray(scores), np.asarray(labels)
            order = np.argsort(-s, kind="mergesort")
            tpr = np.r_[0, np.cumsum(y[order]) / y.sum()]
            fpr = np.r_[0, np.cumsum(1 - y[order]) / (1 - y).sum()]
            recall, precision, _ = precision_recall_points(s, y)
            kw = {"alpha": 0.8 if r == 0 else 0.25, "lw": 1.2 if r == 0 else 0.6,
                  "label": name if r == 0 else None, "color": f"C{list(report.cells).index(name)}"}
            axes[0].plot(fpr, tpr, **kw)
            axes[1].step(recall, precision, where="post", **kw)
    axes[0].set(xlabel="false positive rate", ylabel="true positive rate", title="ROC")
    axes[1].set(xlabel="recall", ylabel="precision", title="precision-recall", ylim=(0, 1.02))
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def run_from_directory(config: PipelineConfig, cohort_path, out_dir, progress=None) -> ExperimentReport:
    from .volumes import load_cohort
    records = load_cohort(cohort_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_dir / "config.resolved.json")
    return run_experiment(records, config, out_dir, progress)
