"""Where the HDA weight map puts its emphasis."""
from __future__ import annotations

import numpy as np

from sodkit import hda_loss as hl

gt = np.zeros((48, 48), np.uint8)
gt[12:36, 10:30] = 1
gt[20:28, 30:40] = 1   # a thin protrusion

omega = hl.weight_map(gt, hl.HdaConfig(neighborhood_side=10, morph_iterations=3))
print(f"omega range: {omega.min():.3f} .. {omega.max():.3f} (bounded by 2)")
print("far background:", omega[2, 2], " deep interior:", omega[24, 18])

# Weight concentrates on the dilated and eroded rims, strongest around the protrusion.
row = omega[24]
print("row 24 profile:", " ".join(f"{v:.2f}" for v in row[::3]))

raw = hl.weight_map(gt, hl.HdaConfig(neighborhood_side=10, morph_iterations=3, normalize_neighborhood=False))
print("raw sums are normalized values times the window area:",
      bool(np.allclose(raw[24, 24], omega[24, 24] * 100)))
