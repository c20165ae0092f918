"""Loss values, gradients and the effect of lambda."""
from __future__ import annotations

import numpy as np

from sodkit import hda_loss as hl
from sodkit.morphology import expand_gt

rng = np.random.default_rng(0)
gt = np.zeros((32, 32), np.uint8)
gt[8:24, 8:24] = 1
pred = np.clip(gt * 0.8 + 0.1 + rng.normal(0, 0.05, gt.shape), 0, 1)

print("plain bce + iou:", round(hl.bce_iou_loss(pred, gt).value, 5))
for lam in (0.0, 1.0, 5.0):
    v = hl.hda_level_loss(pred, gt, hl.HdaConfig(neighborhood_side=8, lam=lam))
    print(f"hda level loss, lambda {lam}: {v.value:.5f}")

# One gradient step on every output map lowers the total.
_, expanded = expand_gt(gt)
maps = [pred.copy() for _ in range(5)]
cfg = hl.HdaConfig(neighborhood_side=8)
before = hl.total_loss(maps[0], expanded, maps[1:], gt, config=cfg)
step = [np.clip(m - 0.01 * g, 0, 1) for m, g in zip(maps, [before.ts_grad, *before.os_grads])]
after = hl.total_loss(step[0], expanded, step[1:], gt, config=cfg)
print(f"total {before.total:.5f} -> {after.total:.5f} after one step")
print("components:", {k: round(v, 4) if isinstance(v, float) else v for k, v in before.as_dict().items()})
