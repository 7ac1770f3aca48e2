"""Pull labels back from distant viewpoints and measure how much they help."""
from _common import smoke_run
from ulft.io import read_json

cfg, out = smoke_run("fuse")
c = read_json(f"{out}/fusion/conflict.json")
for k in ("noisy", "fused"):
    print(f"{k:6s} building IoU {c[k]['train_view_iou']['iou']['building']:.3f}  "
          f"multi-view label entropy {c[k]['mean_entropy']:.4f}")
print("far-view offset", cfg.fusion.offset)
