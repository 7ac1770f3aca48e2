import hashlib
import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from conftest import CONFIGS
from test_grouping import oracle_grouping
from ulft import pipeline
from ulft.cli import main
from ulft.io import read_ids, read_json, read_maskset

SMOKE = os.path.join(CONFIGS, "smoke.json")


def tree_digest(root, skip=()):
    """Hash of every file under ``root`` keyed by relative path."""
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            rel = os.path.relpath(p, root)
            if rel.split(os.sep)[0] in skip:
                continue
            with open(p, "rb") as fh:
                out[rel] = hashlib.sha256(fh.read()).hexdigest()
    return out


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("smoke") / "run")
    assert main(["run-all", "--config", SMOKE, "--out", out]) == 0
    return out


def test_run_all_writes_every_stage(smoke_run):
    for stage in ("scene", "gt", "labels", "geometry", "fusion", "grouping", "semantic",
                  "instance", "eval", "export"):
        info = read_json(os.path.join(smoke_run, stage, "stage.json"))
        assert info["stage"] == stage and info["seed"] == 1
    rep = read_json(os.path.join(smoke_run, "eval", "report.json"))
    for k in ("psnr", "semantic", "semantic_noisy_2d", "pq_scene", "fusion"):
        assert k in rep
    assert rep["pq_scene"]["definition"]
    assert os.path.exists(os.path.join(smoke_run, "export", "points.ply"))


def test_run_all_is_bit_identical_with_other_thread_cap(smoke_run, tmp_path):
    out = str(tmp_path / "again")
    assert main(["run-all", "--config", SMOKE, "--out", out, "--threads", "1"]) == 0
    assert tree_digest(out) == tree_digest(smoke_run)


def test_stage_rerun_reproduces_outputs(smoke_run, tmp_path):
    out = str(tmp_path / "copy")
    shutil.copytree(smoke_run, out)
    shutil.rmtree(os.path.join(out, "grouping"))
    shutil.rmtree(os.path.join(out, "eval"))
    assert main(["group", "--config", SMOKE, "--out", out]) == 0
    assert main(["evaluate", "--config", SMOKE, "--out", out]) == 0
    a, b = tree_digest(out), tree_digest(smoke_run)
    assert {k: v for k, v in a.items() if k.startswith(("grouping", "eval"))} == \
        {k: v for k, v in b.items() if k.startswith(("grouping", "eval"))}


def test_group_stage_matches_bruteforce_oracle(smoke_run, tmp_path):
    out = str(tmp_path / "tau")
    shutil.copytree(smoke_run, out)
    assert main(["group", "--config", SMOKE, "--out", out, "--tau", "0.5"]) == 0
    _, cams, _ = pipeline.load_scene(out)
    depths = pipeline._load_depths(out, len(cams))
    g = os.path.join(out, "grouping")
    eps = read_json(os.path.join(g, "stage.json"))["eps_depth"]
    ms = [read_maskset(os.path.join(g, f"masks_{i:03d}")) for i in range(len(cams))]
    ref = oracle_grouping(ms, depths, cams, eps, 0.5)
    for i, (U, groups) in enumerate(ref):
        assert np.array_equal(read_ids(os.path.join(g, f"guidance_{i:03d}.pgm")), U), i
        assert read_json(os.path.join(g, f"groups_{i:03d}.json"))["groups"] == groups, i


def test_missing_inputs_exit_three(tmp_path, capsys):
    out = str(tmp_path / "empty")
    assert main(["train-geometry", "--config", SMOKE, "--out", out]) == 3
    assert "gen-scene" in capsys.readouterr().err
    assert main(["evaluate", "--config", SMOKE, "--out", out]) == 3


def test_missing_checkpoint_exit_three(smoke_run, tmp_path):
    out = str(tmp_path / "nockpt")
    shutil.copytree(smoke_run, out, ignore=shutil.ignore_patterns("*.ulft"))
    assert main(["fuse", "--config", SMOKE, "--out", out]) == 3


def test_bad_config_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 1, "grouping": {"tua": 0.5}}))
    assert main(["gen-scene", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "tua" in capsys.readouterr().err
    assert main(["gen-scene", "--config", SMOKE, "--out", str(tmp_path / "o"),
                 "--threads", "0"]) == 2
    assert main(["gen-scene", "--config", SMOKE, "--out", str(tmp_path / "o"),
                 "--tau", "1.5"]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ulft", "group", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 3 and r.stderr.startswith("ulft group:")
    r = subprocess.run([sys.executable, "-m", "ulft", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "run-all" in r.stdout
