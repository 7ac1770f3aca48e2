import json

import pytest

from ulft.config import RunConfig, desk_config, load_config
from ulft.errors import ConfigError


def test_defaults_round_trip():
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.grouping.tau == 0.5 and cfg.fusion.offset == 0.3
    assert cfg.grouping.height_threshold_m == 10.0
    assert cfg.train.lr_grid == 1e-3 and cfg.train.lr_heads == 1e-2
    assert cfg.train.lambda_depth == cfg.train.lambda_semantic == cfg.train.lambda_instance == 1


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"version": 2},
    {"grouping": {"tau": 0.5, "extra": 1}},
    {"grouping": {"tau": 0.0}},
    {"grouping": {"variant": "other"}},
    {"instance": {"mode": "other"}},
    {"train": {"batch_rays": 1.5}},
    {"train": {"use_depth": 1}},
    {"field": {"resolutions": [32, 16]}},
    {"noise": {"split_count_range": [0, 5]}},
    {"rig": {"n_views": 1}},
    {"seed": "one"},
    {"scene": []},
])
def test_invalid_configs_are_rejected(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_partial_config_and_replace(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"version": 1, "seed": 4, "grouping": {"tau": 0.7}}))
    cfg = load_config(p)
    assert cfg.seed == 4 and cfg.grouping.tau == 0.7 and cfg.grouping.nest_ratio == 0.8
    c2 = cfg.replace(instance={"mode": "contrastive"}, seed=9)
    assert c2.instance.mode == "contrastive" and c2.seed == 9 and cfg.seed == 4
    with pytest.raises(ConfigError):
        cfg.replace(nothing={})
    with pytest.raises(ConfigError):
        cfg.replace(grouping={"tau": 2.0})


def test_desk_config():
    d = desk_config(3)
    assert d.seed == 3 and d.train.lr_grid == 1e-2 and d.field.n_samples == 32
