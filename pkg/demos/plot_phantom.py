"""
A synthetic vascular phantom
============================

Generate one quick phantom with two aneurysms and show a maximum intensity
projection of the volume next to the atlas.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from aneurysm_patchnet import PhantomSpec, generate_subject, rasterize_sphere

spec = PhantomSpec.quick()
subject = generate_subject(spec, n_aneurysms=2, seed=3, subject_id="demo")
print(subject.id, subject.volume.geometry.shape, "voxels of", spec.voxel_size_mm, "mm")

for label in subject.labels:
    mask = rasterize_sphere(label, subject.geometry)
    print(f"{label.location_tag:<28} radius {label.radius_mm:.1f} mm, {mask.sum()} voxels")

# axial maximum intensity projections (z is the last axis)
fig, axes = plt.subplots(1, 2, figsize=(8, 4))
axes[0].imshow(subject.volume.intensities.max(axis=2).T, origin="lower", cmap="gray")
axes[0].set_title("volume MIP")
axes[1].imshow(subject.atlas.intensities.max(axis=2).T, origin="lower", cmap="magma")
axes[1].set_title("atlas MIP")
for ax in axes:
    ax.set_axis_off()
fig.tight_layout()
fig.savefig("phantom_mip.png", dpi=100)
print("wrote phantom_mip.png")
