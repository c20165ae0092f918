"""Expanded ground truth and the boundary band on a small square."""
from __future__ import annotations

import numpy as np

from sodkit import morphology as mo


def show(name, m):
    print(f"{name}:")
    for row in m:
        print("  " + "".join("#" if v else "." for v in row))


gt = np.zeros((15, 15), np.uint8)
gt[5:10, 4:11] = 1
show("ground truth", gt)

# Three 3x3 passes reach three pixels in every direction, corners included.
show("dilate x3", mo.dilate(gt, 3))
show("erode x1", mo.erode(gt, 1))

envelope, expanded = mo.expand_gt(gt, 2)
show("envelope (dilate AND NOT erode, 2 passes)", envelope)
print("expanded covers gt:", bool(np.all(expanded >= gt)))

band = mo.boundary_band(gt, 1)
print("band pixels at radius 1:", int(band.sum()))
