"""
Network size and a gradient check
=================================

Report parameter counts of the default networks, then compare autograd
gradients with central finite differences on a tiny float64 model.
"""

import numpy as np

from aneurysm_patchnet import ModelConfig, build_model, finite_difference_gradients, model_summary

print(model_summary(ModelConfig()))
print(model_summary(ModelConfig().baseline()))

tiny = ModelConfig(conv_blocks=((1, 2),), fc_widths=(4,), small_side=8, large_side=8, dropout_rate=0.0)
model = build_model(tiny, seed=0).to_float64()
rng = np.random.default_rng(0)
small, large = rng.normal(size=(4, 8, 8, 8)), rng.normal(size=(4, 8, 8, 8))
features = rng.normal(size=(4, 243))
labels = np.array([1.0, 0.0, 0.0, 1.0])

analytic, numeric = finite_difference_gradients(model, small, large, features, labels)
rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-7)
print(f"{len(rel)} parameters, max relative error {rel.max():.1e}")
