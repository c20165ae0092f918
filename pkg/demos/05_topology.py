"""A random-weight forward pass and its shape contract."""
from __future__ import annotations

import numpy as np

from sodkit import topology as tp

cfg = tp.TopologyConfig(64, 64, base_channels=8, seed=0)
res = tp.Topology(cfg).forward(np.random.default_rng(0).random((3, 64, 64)), trace=True)
print("ts map", res.ts_pred.shape, "levels", [p.shape for p in res.os_preds])
print(f"value range {min(m.min() for m in [res.ts_pred, *res.os_preds]):.3f}"
      f" .. {max(m.max() for m in [res.ts_pred, *res.os_preds]):.3f}")

rows = tp.audit_shapes(cfg)
print(f"{sum(r['ok'] for r in rows)}/{len(rows)} traced tensors match the contract")
for r in rows[:6]:
    print(f"  {r['name']:<8} {r['shape']}")
