"""Versioned run configuration.

A config is a JSON object ``{"version": 1, <section>: {...}, "seed": n}``.
Every section is optional and falls back to its defaults; unknown keys at
any level are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from dataclasses import field as dc_field

from .errors import ConfigError

CONFIG_VERSION = 1


@dataclass(frozen=True)
class SceneSection:
    n_buildings: tuple = (8, 24)
    footprint: tuple = (0.07, 0.14)
    height_m: tuple = (10.0, 60.0)
    meters_per_unit: float = 400.0


@dataclass(frozen=True)
class RigSection:
    n_views: int = 20
    n_test_views: int = 8
    pattern: str = "grid"
    altitude: float = 0.3
    width: int = 64
    height: int = 64
    fov_deg: float = 60.0
    depth_noise: float = 0.005
    depth_hole_rate: float = 0.1


@dataclass(frozen=True)
class NoiseSection:
    rooftop_flip_base: float = 0.6
    area_threshold_alpha: float = 0.15
    boundary_jitter_px: int = 2
    small_class_confusion: float = 0.3
    split_count_range: tuple = (1, 5)
    nest_rate: float = 2.0
    drop_rate: float = 0.05


@dataclass(frozen=True)
class FieldSection:
    resolutions: tuple = (16, 32, 64)
    n_samples: int = 48
    init_density: float = -5.0
    head_w_floor: float = 1e-4


@dataclass(frozen=True)
class TrainSection:
    geometry_iterations: int = 5000
    semantic_iterations: int = 2000
    instance_iterations: int = 2000
    batch_rays: int = 1024
    lr_grid: float = 1e-3
    lr_heads: float = 1e-2
    lambda_depth: float = 1.0
    lambda_semantic: float = 1.0
    lambda_instance: float = 1.0
    use_depth: bool = True


@dataclass(frozen=True)
class FusionSection:
    offset: float = 0.3
    eps_depth_px: float = 2.0
    iou_threshold: float = 0.5
    both_directions: bool = True
    conflict_points: int = 20000


@dataclass(frozen=True)
class GroupingSection:
    tau: float = 0.5
    nest_ratio: float = 0.8
    height_threshold_m: float = 10.0
    variant: str = "cross"          # raw | filter | cross


@dataclass(frozen=True)
class InstanceSection:
    mode: str = "assignment"
    n_surrogate: int = 24
    embed_dim: int = 3
    gamma: float = 1.0
    momentum: float = 0.99
    outer_exp: bool = True
    supervision: str = "group"


@dataclass(frozen=True)
class ClusterSection:
    min_pts: int = 10
    min_cluster_size: int = 50
    eps_percentile: float = 1.0
    n_samples: int = 20000


SECTIONS = {
    "scene": SceneSection, "rig": RigSection, "noise": NoiseSection, "field": FieldSection,
    "train": TrainSection, "fusion": FusionSection, "grouping": GroupingSection,
    "instance": InstanceSection, "cluster": ClusterSection,
}


@dataclass(frozen=True)
class RunConfig:
    scene: SceneSection = dc_field(default_factory=SceneSection)
    rig: RigSection = dc_field(default_factory=RigSection)
    noise: NoiseSection = dc_field(default_factory=NoiseSection)
    field: FieldSection = dc_field(default_factory=FieldSection)
    train: TrainSection = dc_field(default_factory=TrainSection)
    fusion: FusionSection = dc_field(default_factory=FusionSection)
    grouping: GroupingSection = dc_field(default_factory=GroupingSection)
    instance: InstanceSection = dc_field(default_factory=InstanceSection)
    cluster: ClusterSection = dc_field(default_factory=ClusterSection)
    seed: int = 1

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        d = {"version": CONFIG_VERSION, "seed": self.seed}
        for name in SECTIONS:
            d[name] = {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in dataclasses.asdict(getattr(self, name)).items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = {}
        for name, sec in SECTIONS.items():
            if name in d:
                kw[name] = _section(sec, d[name], name)
        if "seed" in d:
            kw["seed"] = _coerce(d["seed"], 0, "seed")
        return cls(**kw)

    def replace(self, **sections) -> "RunConfig":
        """Copy with per-section field overrides: ``replace(train={"lr_grid": 1e-2})``."""
        kw = {}
        for name, over in sections.items():
            if name == "seed":
                kw["seed"] = int(over)
                continue
            if name not in SECTIONS:
                raise ConfigError(f"unknown config section {name!r}")
            cur = dataclasses.asdict(getattr(self, name))
            cur.update(over)
            kw[name] = _section(SECTIONS[name], cur, name)
        return dataclasses.replace(self, **kw)


def _coerce(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(f"{where}: expected a non-empty list")
        return tuple(_coerce(v, default[0], where) for v in value)
    return value


def _section(cls, d, name):
    if not isinstance(d, dict):
        raise ConfigError(f"section {name!r} must be an object")
    fields = {f.name: f.default for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(sorted(unknown))}")
    return cls(**{k: _coerce(v, fields[k], f"{name}.{k}") for k, v in d.items()})


def validate(cfg: RunConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    r, t, g, i = cfg.rig, cfg.train, cfg.grouping, cfg.instance
    need(r.n_views >= 2, "rig.n_views must be >= 2")
    need(r.n_test_views >= 1, "rig.n_test_views must be >= 1")
    need(r.width > 0 and r.height > 0, "rig image size must be positive")
    need(0 < r.fov_deg < 180, "rig.fov_deg must lie in (0, 180)")
    need(r.depth_noise >= 0 and 0 <= r.depth_hole_rate <= 1, "invalid depth prior noise")
    need(len(cfg.field.resolutions) >= 1, "field.resolutions must be non-empty")
    need(all(b > a for a, b in zip(cfg.field.resolutions, cfg.field.resolutions[1:])),
         "field.resolutions must be strictly increasing")
    need(cfg.field.n_samples >= 1, "field.n_samples must be >= 1")
    for k in ("geometry_iterations", "semantic_iterations", "instance_iterations"):
        need(getattr(t, k) >= 0, f"train.{k} must be >= 0")
    need(t.batch_rays >= 1, "train.batch_rays must be >= 1")
    need(t.lr_grid > 0 and t.lr_heads > 0, "learning rates must be positive")
    need(0 < g.tau <= 1, "grouping.tau must lie in (0, 1]")
    need(0 < g.nest_ratio <= 1, "grouping.nest_ratio must lie in (0, 1]")
    need(g.height_threshold_m >= 0, "grouping.height_threshold_m must be >= 0")
    need(g.variant in ("raw", "filter", "cross"), "grouping.variant must be raw|filter|cross")
    need(i.mode in ("assignment", "contrastive"), "instance.mode must be assignment|contrastive")
    need(i.supervision in ("group", "representative"),
         "instance.supervision must be group|representative")
    need(0 <= i.momentum <= 1, "instance.momentum must lie in [0, 1]")
    need(i.gamma > 0, "instance.gamma must be positive")
    need(i.n_surrogate >= 1 and i.embed_dim >= 1, "instance channel counts must be positive")
    need(cfg.fusion.offset >= 0, "fusion.offset must be >= 0")
    need(cfg.fusion.eps_depth_px > 0, "fusion.eps_depth_px must be positive")
    lo, hi = cfg.noise.split_count_range
    need(1 <= lo <= hi, "noise.split_count_range must satisfy 1 <= lo <= hi")
    need(cfg.cluster.min_cluster_size >= 1 and cfg.cluster.min_pts >= 1,
         "cluster sizes must be positive")
    need(0 < cfg.cluster.eps_percentile < 100, "cluster.eps_percentile must lie in (0, 100)")


def load_config(path) -> RunConfig:
    from .io import read_json
    return RunConfig.from_dict(read_json(path))


def desk_config(seed: int = 1) -> RunConfig:
    """Settings sized for a single CPU core: coarser sampling, fewer iterations
    and a larger grid learning rate (see the README)."""
    return RunConfig(seed=seed).replace(
        field={"n_samples": 32},
        train={"geometry_iterations": 3000, "semantic_iterations": 1500,
               "instance_iterations": 1500, "lr_grid": 1e-2},
    )
