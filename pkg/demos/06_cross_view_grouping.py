"""Group over-segmented masks across views and compare the three variants."""
import os

from _common import smoke_run
from ulft import pipeline
from ulft.io import read_json

cfg, out = smoke_run("fuse")
n = len(pipeline.load_scene(out)[1])
for variant in ("raw", "filter", "cross"):
    pipeline.group(cfg.replace(grouping={"variant": variant}), out)
    masks = groups = 0
    for i in range(n):
        t = read_json(os.path.join(out, "grouping", f"groups_{i:03d}.json"))
        groups += len(t["groups"])
        masks += sum(len(g) for g in t["groups"])
    print(f"{variant:6s} {masks:4d} masks in {groups:4d} groups")
