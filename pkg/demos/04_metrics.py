"""Scoring three predictions of one mask."""
from __future__ import annotations

import numpy as np

from sodkit import metrics as me
from sodkit.morphology import dilate

gt = np.zeros((64, 64), np.uint8)
gt[16:48, 20:44] = 1
rng = np.random.default_rng(1)

candidates = {
    "exact": gt.astype(float),
    "blurry": np.clip(0.7 * gt + 0.15 + rng.normal(0, 0.1, gt.shape), 0, 1),
    "fat": dilate(gt, 4).astype(float),
}
print(f"{'name':<8} {'mae':>7} {'max_f':>7} {'mae_b':>7} {'s':>7} {'ashp':>7}")
for name, pred in candidates.items():
    m = me.evaluate_image(name, pred, gt)
    print(f"{name:<8} {m.mae:7.4f} {m.max_f:7.4f} {m.mae_b:7.4f} {m.s_measure:7.4f} {m.ashp:7.4f}")

# The boundary MAE singles out the over-grown mask: all of its error sits near the edge.
report = me.aggregate([me.evaluate_image(k, v, gt) for k, v in candidates.items()])
print("set A/M:", report.as_dict()["a_over_m"])
