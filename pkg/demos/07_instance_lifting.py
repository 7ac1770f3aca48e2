"""Lift grouped masks into a 3D instance field in both modes and score PQ."""
from _common import smoke_run
from ulft import pipeline

cfg, out = smoke_run("train-semantic")
pipeline.group(cfg, out)
for mode in ("assignment", "contrastive"):
    c = cfg.replace(instance={"mode": mode})
    pipeline.train_instance(c, out)
    pq = pipeline.evaluate(c, out).sections["pq_scene"]
    print(f"{mode:11s} PQ {pq['PQ']:.1f}  tp {pq['TP']} fp {pq['FP']} fn {pq['FN']}")
