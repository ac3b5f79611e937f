"""
A small four-cell experiment
============================

Run both networks against both negative policies on a 12-subject phantom
cohort with two repetitions. Takes a few minutes on one core; the full
quick preset (40 subjects, 10 repetitions) is what ``aneurysm-patchnet
experiment --quick`` runs.
"""

from dataclasses import replace

from aneurysm_patchnet import CohortSpec, PipelineConfig, generate_records, run_experiment, summary_table

config = PipelineConfig.quick(seed=1)
config = replace(config,
                 cohort=CohortSpec(n_subjects=12, prevalence=0.4, seed=1),
                 experiment=replace(config.experiment, n_repetitions=2, learning_rates=(1e-3,)))
records = generate_records(config.cohort, config.phantom)
report = run_experiment(records, config, out_dir="quick_experiment_out", progress=print)
print(summary_table(report.to_json()))
