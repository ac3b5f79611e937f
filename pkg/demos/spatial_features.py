"""
The spatial feature vector
==========================

Every patch carries 243 numbers: its canonical-space center, the distances to
a 6 x 6 x 6 grid spanning the brain and the distances to 24 arterial landmarks.
"""

import numpy as np

from aneurysm_patchnet import build_grid, default_landmarks, spatial_features

grid = build_grid()
landmarks = default_landmarks()

center = landmarks.point("acom") + np.array([4.0, 0.0, 0.0])
d = spatial_features(center, grid, landmarks)
print("length", d.shape[0])
print("center", d[:3])

# the nearest landmarks, read back from the last 24 entries
landmark_d = d[219:]
for k in np.argsort(landmark_d)[:3]:
    print(f"{landmarks.names[k]:<24} {landmark_d[k]:6.1f} mm")

# moving center, grid and landmarks together leaves the distances untouched
shift = np.array([10.0, -5.0, 2.0])
moved = spatial_features(center + shift,
                         build_grid(tuple(map(tuple, np.array(grid.bounding_box) + shift))),
                         type(landmarks)(landmarks.points + shift, landmarks.names, landmarks.location_tags))
print("max change in distances after a rigid shift:", np.abs(moved[3:] - d[3:]).max())
