"""Command-line entry point: ``aneurysm-patchnet <command> [options]``.

Commands
--------
phantom     generate a synthetic cohort (NIfTI volumes + manifest)
extract     sample a patch dataset from a cohort
train       train one network on a cohort split and save a checkpoint
experiment  run the {baseline, informed} x {random, intensity-matched} matrix
report      print the summary table of an experiment directory

Exit codes: 0 success, 2 configuration or validation error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import PipelineConfig, dump_config, load_config, to_json
from .errors import PatchNetError, ValidationError

log = logging.getLogger("aneurysm_patchnet")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Progress:
    """``event=... key=value`` lines on stderr when enabled, plain log lines otherwise."""

    def __init__(self, machine: bool):
        self.machine = machine

    def __call__(self, line: str) -> None:
        if self.machine:
            print(line, file=sys.stderr, flush=True)
        else:
            log.info(line)

    def event(self, name: str, **fields) -> None:
        self(" ".join([f"event={name}"] + [f"{k}={_kv(v)}" for k, v in fields.items()]))


def _kv(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v).replace(" ", "")


def _policy(text: str) -> str:
    return text.replace("-", "_")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults apply to missing fields)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field by dotted path, e.g. train.epochs=20 (repeatable)")
    p.add_argument("--quick", action="store_true", help="start from the desk-scale quick preset")
    p.add_argument("--seed", type=int, help="master seed (same as --set seed=N)")
    p.add_argument("--jobs", type=int, help="worker processes (same as --set jobs=N)")
    p.add_argument("--log-json", action="store_true", help="emit machine-readable event=... progress lines")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aneurysm-patchnet", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic cohort")
    _common(p)
    p.add_argument("--subjects", type=int, help="number of subjects")
    p.add_argument("--prevalence", type=float, help="fraction of subjects with aneurysms")
    p.add_argument("--out", help="output directory (created if missing)")

    p = sub.add_parser("extract", help="sample a patch dataset from a cohort")
    _common(p)
    p.add_argument("--cohort", help="cohort directory or manifest (default: paths.cohort)")
    p.add_argument("--policy", type=_policy, help="random or intensity-matched (default: config policy)")
    p.add_argument("--negatives", type=int, help="negatives per subject")
    p.add_argument("--out", help="dataset directory")

    p = sub.add_parser("train", help="train one network on a stratified subject split")
    _common(p)
    p.add_argument("--cohort", help="cohort directory or manifest (default: paths.cohort)")
    p.add_argument("--policy", type=_policy)
    p.add_argument("--network", choices=("baseline", "informed"), default="informed")
    p.add_argument("--lr", type=float, help="learning rate (default: train.learning_rate)")
    p.add_argument("--out", help="run directory")

    p = sub.add_parser("experiment", help="run the four-cell experiment")
    _common(p)
    p.add_argument("--cohort", help="cohort directory or manifest; a phantom cohort is generated if absent")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--cell", action="append", default=[], metavar="NETWORK:POLICY",
                   help="restrict to a cell, e.g. baseline:random (repeatable)")
    p.add_argument("--out", help="run directory")

    p = sub.add_parser("report", help="print the summary of an experiment run")
    p.add_argument("run", help="experiment run directory or report.json")
    p.add_argument("--plots", action="store_true", help="re-render curves.png next to the report")
    p.add_argument("--log-json", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve_config(args, extra: list[str]) -> PipelineConfig:
    overrides = list(extra)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "jobs", None) is not None:
        overrides.append(f"jobs={args.jobs}")
    overrides += args.overrides
    return load_config(args.config, overrides, quick=args.quick)


def _run_dir(args, cfg: PipelineConfig, command: str) -> Path:
    out = Path(args.out) if args.out else Path(cfg.paths.output) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _record_run(out: Path, cfg: PipelineConfig, command: str, argv) -> None:
    dump_config(cfg, out / "config.resolved.json")
    (out / "run.json").write_text(json.dumps(
        {"command": command, "argv": list(argv), "seed": cfg.seed}, indent=2))


def _cohort_path(args, cfg: PipelineConfig) -> str:
    path = args.cohort or cfg.paths.cohort
    if not path:
        raise ValidationError("no cohort given: pass --cohort or set paths.cohort")
    return path


# --------------------------------------------------------------------------
# commands

def cmd_phantom(cfg: PipelineConfig, out_dir: Path, progress: _Progress) -> Path:
    from .phantom import generate_cohort

    t = time.time()
    manifest = generate_cohort(cfg.cohort, cfg.phantom, out_dir, cfg.features.landmark_set(), jobs=cfg.jobs)
    meta = json.loads(manifest.read_text())["metadata"]
    progress.event("phantom", subjects=cfg.cohort.n_subjects, positive=meta["n_positive"],
                   control=meta["n_control"], aneurysms=meta["n_aneurysms"], seconds=round(time.time() - t, 2))
    print(f"{cfg.cohort.n_subjects} subjects ({meta['n_positive']} with aneurysms, "
          f"{meta['n_aneurysms']} aneurysms) -> {manifest}")
    return manifest


def cmd_extract(cfg: PipelineConfig, cohort: str, policy: str, out_dir: Path, progress: _Progress):
    from .sampler import build_dataset

    ds = build_dataset(cohort, policy, cfg.sampler.negatives_per_subject, cfg.seed, cfg.sampler, out_dir,
                       cfg.features.grid(), cfg.features.landmark_set())
    n_pos = int(ds.labels.sum())
    n_neg = len(ds) - n_pos
    ratio = n_neg / n_pos if n_pos else float("inf")
    digest = hashlib.sha256((out_dir / "samples.json").read_bytes()).hexdigest()[:16]
    progress.event("extract", policy=policy, positives=n_pos, negatives=n_neg, ratio=ratio, sha256=digest)
    print(f"{policy}: {n_pos} positives, {n_neg} negatives, ratio 1:{ratio:.1f}")
    thr = ds.info.get("thresholds")
    if thr:
        print(f"thresholds: local {thr['local_thr']:.4f}, global {thr['global_thr']:.4f}")
    return ds


def cmd_train(cfg: PipelineConfig, cohort: str, policy: str, network: str, out_dir: Path, progress: _Progress):
    """Train on the first inner split of the first outer fold; test on that outer fold."""
    from .crossval import plan_nested_cv, positivity
    from .metrics import evaluate
    from .model import build_model, model_summary, predict, save_checkpoint, train
    from .sampler import sample_cohort
    from .seeding import derive_seed
    from .volumes import load_cohort

    records = load_cohort(cohort)
    exp = cfg.experiment
    plan = plan_nested_cv(positivity(records), exp.n_outer, exp.n_inner, derive_seed(cfg.seed, "plan", 0))
    ds = sample_cohort(records, policy, derive_seed(cfg.seed, "rep-sampling", 0), cfg.sampler,
                       cfg.features.grid(), cfg.features.landmark_set(), threshold_subjects=plan.outer_train(0))
    mc = cfg.model_config(network)
    progress(model_summary(mc))
    model = build_model(mc, derive_seed(cfg.seed, "train", network))
    tc = replace(cfg.train, seed=derive_seed(cfg.seed, "train", network))
    train(model, ds.for_subjects(plan.inner_train(0, 0)), ds.for_subjects(plan.inner_val(0, 0)),
          tc, cfg.augmentation)
    test = ds.for_subjects(plan.outer_test(0))
    probs = predict(model, test)
    report = evaluate(probs, test.labels, exp.decision_threshold)
    save_checkpoint(model, out_dir / "model.ckpt")
    (out_dir / "metrics.json").write_text(json.dumps(
        {"test": report.to_json(), "history": model.history, "split": plan.to_json(),
         "test_predictions": dict(zip(test.ids, probs.tolist()))}, indent=1))
    progress.event("train", network=network, policy=policy, epochs=len([h for h in model.history if "epoch" in h]),
                   auroc=report.auroc, aupr=report.aupr)
    print(f"{network}/{policy}: test AUROC {report.auroc if report.auroc is not None else float('nan'):.3f}, "
          f"AUPR {report.aupr if report.aupr is not None else float('nan'):.3f} -> {out_dir / 'model.ckpt'}")
    return model, report


def cmd_experiment(cfg: PipelineConfig, cohort: str | None, out_dir: Path, progress: _Progress):
    from .experiment import run_experiment, summary_table
    from .phantom import generate_cohort
    from .volumes import load_cohort

    if cohort is None:
        progress.event("phantom", note="no cohort given; generating one", subjects=cfg.cohort.n_subjects)
        cohort = str(generate_cohort(cfg.cohort, cfg.phantom, out_dir / "cohort",
                                     cfg.features.landmark_set(), jobs=cfg.jobs))
    records = load_cohort(cohort)
    report = run_experiment(records, cfg, out_dir, progress=progress)
    print(summary_table(report.to_json()))
    progress.event("experiment", seconds=round(report.elapsed_s, 1), out=out_dir)
    return report


def cmd_report(run: str, plots: bool) -> str:
    from .experiment import load_report, summary_table

    doc = load_report(run)
    text = summary_table(doc)
    if plots:
        from .experiment import ExperimentReport, plot_curves
        from .metrics import MetricsReport
        from .experiment import CellResult
        cells = {}
        for name, c in doc["cells"].items():
            cells[name] = CellResult(name, c["learning_rate"], c["selection"],
                                     [MetricsReport(**m) if m else None for m in c["repetitions"]],
                                     scores=c["scores"], labels=c["labels"])
        target = Path(run) if Path(run).is_dir() else Path(run).parent
        plot_curves(ExperimentReport(doc["config"], cells, doc["plans"], doc["wilcoxon"]), target / "curves.png")
    print(text)
    return text


# --------------------------------------------------------------------------

def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    progress = _Progress(args.log_json)
    try:
        if args.command == "report":
            cmd_report(args.run, args.plots)
            return EXIT_OK
        extra = []
        if args.command == "phantom":
            if args.subjects is not None:
                extra.append(f"cohort.n_subjects={args.subjects}")
            if args.prevalence is not None:
                extra.append(f"cohort.prevalence={args.prevalence}")
            if args.seed is not None:
                extra.append(f"cohort.seed={args.seed}")
        if getattr(args, "policy", None):
            extra.append(f"policy={args.policy}")
        if args.command == "extract" and args.negatives is not None:
            extra.append(f"sampler.negatives_per_subject={args.negatives}")
        if args.command == "train" and args.lr is not None:
            extra.append(f"train.learning_rate={args.lr}")
        if args.command == "experiment":
            if args.repetitions is not None:
                extra.append(f"experiment.n_repetitions={args.repetitions}")
            if args.cell:
                extra.append("experiment.cells=" + json.dumps(args.cell))
        cfg = _resolve_config(args, extra)
        out = _run_dir(args, cfg, args.command)
        _record_run(out, cfg, args.command, argv)
        if args.command == "phantom":
            cmd_phantom(cfg, out, progress)
        elif args.command == "extract":
            cmd_extract(cfg, _cohort_path(args, cfg), cfg.policy, out, progress)
        elif args.command == "train":
            cmd_train(cfg, _cohort_path(args, cfg), cfg.policy, args.network, out, progress)
        elif args.command == "experiment":
            cmd_experiment(cfg, args.cohort or cfg.paths.cohort, out, progress)
    except (ValueError, FileNotFoundError) as exc:
        # ValidationError, ConfigError and DomainError are ValueErrors
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PatchNetError, RuntimeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
