"""
Ranking metrics and the exact signed-rank test
==============================================
"""

import numpy as np

from aneurysm_patchnet import evaluate, pr_auc, roc_auc, wilcoxon_signed_rank

rng = np.random.default_rng(0)
labels = (rng.random(200) < 0.1).astype(int)
scores = np.clip(0.3 * labels + rng.normal(0.3, 0.15, 200), 0, 1)

print("AUROC", round(roc_auc(scores, labels), 3))
print("AUPR ", round(pr_auc(scores, labels), 3), "(prevalence", labels.mean(), ")")
print(evaluate(scores, labels))

# ten paired AUPRs, as produced by ten repetitions of two models
a = np.array([0.42, 0.39, 0.47, 0.44, 0.40, 0.45, 0.43, 0.41, 0.46, 0.38])
b = a - np.array([0.03, 0.01, 0.05, -0.01, 0.02, 0.04, 0.02, 0.03, 0.01, 0.02])
res = wilcoxon_signed_rank(a, b)
print(f"W+ = {res.statistic}, exact two-sided p = {res.p_value:.4f}")
