"""
Random versus intensity-matched negatives
=========================================

Sample a small cohort twice, once per negative policy, and compare how much
vessel the negatives contain.
"""

import numpy as np

from aneurysm_patchnet import CohortSpec, PhantomSpec, SamplerConfig, generate_records, sample_cohort

records = generate_records(CohortSpec(n_subjects=10, prevalence=0.5, seed=1), PhantomSpec.quick())
config = SamplerConfig.quick()

for policy in ("random", "intensity_matched"):
    ds = sample_cohort(records, policy, seed=0, config=config)
    neg = [m["atlas_local"] for m in ds.meta if m["label"] == 0]
    pos = [m["atlas_local"] for m in ds.meta if m["label"] == 1]
    counts = ds.info["counts"]
    print(f"{policy:<18} {counts['positive']} positives, {counts['negative']} negatives, "
          f"mean atlas in box: positives {np.mean(pos):.3f}, negatives {np.mean(neg):.3f}")
    if ds.info["thresholds"]:
        print("  thresholds", ds.info["thresholds"])
