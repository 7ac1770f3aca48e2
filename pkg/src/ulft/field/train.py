"""Stage-wise optimisation of the field.

``geometry`` fits density and color (plus the depth prior when enabled);
``semantic`` fits the semantic channels with geometry frozen.  The instance
stage reuses :func:`train` with a hook that supplies its own loss terms.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, PreconditionError, TrainingError
from .grid import MultiResGrid
from .losses import LossWeights, Targets, compute_losses
from .optim import GridAdam
from .frozen import WeightOperator, build_operator
from .render import Gradients, RayBatch, RenderOut, backward, render

log = logging.getLogger(__name__)

STAGES = ("geometry", "semantic", "instance")
_STAGE_KEY = {s: i for i, s in enumerate(STAGES)}
CURVE_COLUMNS = ("iteration", "L_color", "L_depth", "L_semantic", "L_instance")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_rays: int = 1024
    n_samples: int = 48
    lr_grid: float = 1e-3
    lr_heads: float = 1e-2
    lambda_depth: float = 1.0
    lambda_semantic: float = 1.0
    lambda_instance: float = 1.0
    use_depth: bool = True
    head_w_floor: float = 1e-4
    seed: int = 0
    log_every: int = 500


@dataclass(eq=False)
class TrainData:
    """Flattened per-pixel training rays and their targets."""

    rays: RayBatch
    color: np.ndarray | None = None
    depth: np.ndarray | None = None
    semantic: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rays)


@dataclass(eq=False)
class TrainResult:
    grid: MultiResGrid
    curve: list
    optimizer: GridAdam | None = None


def batch_rng(seed: int, stage: str, iteration: int) -> np.random.Generator:
    """Counter-style generator: the stream depends only on (seed, stage, iteration)."""
    return np.random.default_rng([int(seed), _STAGE_KEY[stage], int(iteration)])


def sample_batch(n_pool: int, batch: int, rng: np.random.Generator, pool=None):
    if pool is None:
        return np.sort(rng.choice(n_pool, size=min(batch, n_pool), replace=False))
    pool = np.asarray(pool)
    take = rng.choice(len(pool), size=min(batch, len(pool)), replace=False)
    return np.sort(pool[take])


def _curve_row(it, values):
    return (it, values.get("color", np.nan), values.get("depth", np.nan),
            values.get("semantic", np.nan), values.get("instance", np.nan))


def train(stage: str, grid: MultiResGrid, data: TrainData, cfg: TrainConfig = TrainConfig(),
          hook=None, pool=None, operator: WeightOperator | None = None,
          optimizer: GridAdam | None = None) -> TrainResult:
    """Optimise ``grid`` in place for ``cfg.iterations`` steps.

    The geometry stage renders stratified samples and backpropagates through
    compositing.  Semantic and instance stages keep density frozen, so they
    render through a cached :class:`WeightOperator` built from midpoint
    samples.  ``hook(grid, op, data, it, rng, weights)`` supplies the
    instance losses and returns ``(terms, rows)``.  ``pool`` restricts ray
    sampling to a subset of indices.
    """
    if stage not in STAGES:
        raise InputError(f"unknown stage {stage!r}")
    if cfg.iterations < 0:
        raise InputError("iterations must be >= 0")
    if stage == "geometry" and data.color is None:
        raise PreconditionError("geometry stage needs target colors")
    if stage == "semantic" and data.semantic is None:
        raise PreconditionError("semantic stage needs target labels")
    if stage == "instance" and hook is None:
        raise PreconditionError("instance stage needs a loss hook")
    n_pool = len(data) if pool is None else len(pool)
    if n_pool == 0:
        raise PreconditionError(f"{stage} stage has no training rays")
    groups = ("density", "color", "background") if stage == "geometry" else (stage,)
    opt = optimizer or GridAdam(grid, groups, cfg.lr_grid, cfg.lr_heads)
    grads = Gradients.zeros_like(grid)
    weights = LossWeights(cfg.lambda_depth, cfg.lambda_semantic, cfg.lambda_instance)
    K = cfg.n_samples
    if stage != "geometry" and operator is None and cfg.iterations:
        operator = build_operator(grid, data.rays, K, cfg.head_w_floor)
    curve = []
    for it in range(cfg.iterations):
        rng = batch_rng(cfg.seed, stage, it)
        if stage == "geometry":
            idx = sample_batch(len(data), cfg.batch_rays, rng, pool)
            jitter = rng.random((len(idx), K))
            out = render(grid, data.rays.subset(idx), K, jitter, heads=("color",))
            depth = data.depth[idx] if (cfg.use_depth and data.depth is not None) else None
            terms = compute_losses(out, Targets(color=data.color[idx], depth=depth), weights)
            _check(terms, stage, it)
            backward(grid, out, terms.grads, train_geometry=True, train_heads=(), accum=grads)
        else:
            if hook is not None:
                terms, rows = hook(grid, operator, data, it, rng, weights)
            else:
                rows = sample_batch(len(data), cfg.batch_rays, rng, pool)
                out = RenderOut(None, operator.depth[rows], operator.apply(grid.params[stage], rows),
                                None, operator.opacity[rows], None)
                terms = compute_losses(out, Targets(semantic=data.semantic[rows]), weights)
            _check(terms, stage, it)
            operator.scatter(rows, terms.grads[stage], grads.params[stage], grads.touched)
        opt.step(grads)
        if hook is not None and hasattr(hook, "after_step"):
            hook.after_step(grid)
        curve.append(_curve_row(it, terms.values))
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("%s it=%d %s", stage, it,
                     " ".join(f"{k}={v:.5f}" for k, v in terms.values.items()))
    return TrainResult(grid, curve, opt)


def _check(terms, stage, it):
    if not np.isfinite(terms.total):
        raise TrainingError(f"{stage} loss became non-finite at iteration {it}")


def write_curve(path, curve) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in curve:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def read_curve(path) -> list:
    with open(path) as f:
        rows = list(csv.reader(f))[1:]
    return [(int(r[0]),) + tuple(float(x) for x in r[1:]) for r in rows]
