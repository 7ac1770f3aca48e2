"""Adam with two learning-rate groups.

Grid geometry and color (plus the background color) use ``lr_grid``; the
semantic and instance channels use ``lr_heads``.  Grid rows are updated
lazily: only vertices that received gradient in the current step move,
and their moments are the only ones decayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from . import _kernels
from .grid import GRID_GROUPS, MultiResGrid
from .render import Gradients

BETAS = (0.9, 0.999)
EPS = 1e-8


@dataclass(eq=False)
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def group_lr(name: str, lr_grid: float, lr_heads: float) -> float:
    return lr_grid if name in GRID_GROUPS else lr_heads


def adam_update(param, grad, m, v, step, lr, betas=BETAS, eps=EPS):
    """Dense in-place Adam update of one array (``step`` counts from 1)."""
    b1, b2 = betas
    m *= b1
    m += (1 - b1) * grad
    v *= b2
    v += (1 - b2) * grad * grad
    mhat = m / (1 - b1 ** step)
    vhat = v / (1 - b2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def optimizer_step(params: dict, grads: dict, state: AdamState, lr_grid: float = 1e-3,
                   lr_heads: float = 1e-2) -> AdamState:
    """Dense Adam over a dict of named arrays; raises on non-finite gradients."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        adam_update(p, np.asarray(g, dtype=np.float64), m, v, state.step,
                    group_lr(name, lr_grid, lr_heads))
    return state


class GridAdam:
    """Lazy Adam bound to a :class:`MultiResGrid`."""

    def __init__(self, grid: MultiResGrid, groups, lr_grid=1e-3, lr_heads=1e-2):
        self.grid = grid
        self.groups = tuple(groups)
        self.lr_grid = lr_grid
        self.lr_heads = lr_heads
        self.state = AdamState()
        for g in self.groups:
            a = grid.background if g == "background" else grid.params[g]
            self.state.m[g] = np.zeros_like(a)
            self.state.v[g] = np.zeros_like(a)

    def step(self, grads: Gradients):
        st = self.state
        st.step += 1
        b1, b2 = BETAS
        for g in self.groups:
            lr = group_lr(g, self.lr_grid, self.lr_heads)
            if g == "background":
                if not np.all(np.isfinite(grads.background)):
                    raise TrainingError("non-finite gradient in parameter 'background'")
                adam_update(self.grid.background, grads.background, st.m[g], st.v[g],
                            st.step, lr)
                continue
            bad = _kernels.adam_rows(self.grid.params[g], grads.params[g], st.m[g], st.v[g],
                                     grads.touched, lr, b1, b2, EPS, float(st.step), True)
            if bad >= 0:
                raise TrainingError(f"non-finite gradient in parameter {g!r} at vertex {bad}")
        grads.background[:] = 0.0
        grads.touched[:] = False
