"""Fit the radiance field with the depth prior, then render a held-out view."""
import numpy as np

from _common import smoke_run
from ulft import pipeline
from ulft.evaluation import psnr
from ulft.field.render import surface_depth
from ulft.field.train import read_curve

cfg, out = smoke_run("train-geometry")
curve = read_curve(f"{out}/geometry/curve.csv")
print("colour loss at iteration", curve[0][0], round(curve[0][1], 4),
      "-> iteration", curve[-1][0], round(curve[-1][1], 4))

scene, _, test = pipeline.load_scene(out)
gt = pipeline.load_gt(out, "test", len(test))
grid, _ = pipeline._load_field(out, "geometry", "train-geometry")
r = pipeline.render_test(grid, cfg, scene, test, ("color",))
print("held-out PSNR", [round(psnr(a["color"], g["color"]), 2) for a, g in zip(r, gt)])
err = np.nanmean(np.abs(surface_depth(r[0]["depth"], r[0]["opacity"]) - gt[0]["depth"]))
print("mean depth error on test view 0", round(float(err), 4))
