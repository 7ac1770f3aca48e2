import os
import sys

from ulft import pipeline
from ulft.config import load_config

HERE = os.path.dirname(os.path.abspath(__file__))
SMOKE = os.path.join(HERE, "..", "configs", "smoke.json")


def smoke_run(upto):
    """Run the smoke pipeline up to and including ``upto``; reuse finished stages."""
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join("runs", "demo")
    cfg = load_config(SMOKE)
    stage_dir = {"gen-scene": "scene", "render-gt": "gt", "synth-labels": "labels",
                 "train-geometry": "geometry", "fuse": "fusion", "group": "grouping",
                 "train-semantic": "semantic", "train-instance": "instance",
                 "evaluate": "eval", "export": "export"}
    for name in pipeline.RUN_ALL:
        if not os.path.exists(os.path.join(out, stage_dir[name], "stage.json")):
            pipeline.STAGE_FUNCS[name](cfg, out)
        if name == upto:
            break
    return cfg, out
