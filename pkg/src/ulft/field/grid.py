"""Dense multi-resolution voxel grids over the unit cube."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import NUM_CLASSES
from . import _kernels

GROUPS = ("density", "color", "semantic", "instance")
# parameter groups optimised with the grid learning rate; the rest use the head rate
GRID_GROUPS = ("density", "color", "background")
HEAD_GROUPS = ("semantic", "instance")


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 30, x, np.log1p(np.exp(np.minimum(x, 30))))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1 + np.tanh(0.5 * x))


@dataclass(eq=False)
class MultiResGrid:
    """Per-vertex channels on a stack of dense grids.

    A query sums the trilinear interpolation of every level, then applies
    the channel activation: softplus for density, sigmoid for color, none
    for semantic logits and instance outputs.  Rendering multiplies the
    activated density by ``density_scale`` (densities are stored per unit of
    the finest voxel rather than per scene unit).
    """

    resolutions: tuple
    n_instance: int
    params: dict
    background: np.ndarray
    density_scale: float = 1.0

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolutions)
        if any(r < 2 for r in res) or any(b <= a for a, b in zip(res, res[1:])):
            raise ValueError(f"resolutions must be >= 2 and strictly increasing: {res}")
        self.resolutions = res
        self.res = np.array(res, dtype=np.int64)
        self.offs = np.concatenate([[0], np.cumsum(self.res ** 3)[:-1]]).astype(np.int64)
        self.n_vertices = int(np.sum(self.res ** 3))

    @classmethod
    def create(cls, resolutions=(16, 32, 64), n_instance: int = 24, density_scale=None,
               init_density: float = -5.0, init_std: float = 0.0, seed: int = 0
               ) -> "MultiResGrid":
        res = np.array(resolutions)
        n = int(np.sum(res ** 3))
        rng = np.random.default_rng(seed)
        widths = {"density": 1, "color": 3, "semantic": NUM_CLASSES, "instance": n_instance}
        params = {}
        for g in GROUPS:
            a = np.zeros((n, widths[g]))
            if init_std and g != "density":
                a += init_std * rng.standard_normal(a.shape)
            params[g] = a
        # spread the density bias over the levels so every level starts equal
        params["density"][:] = init_density / len(res)
        if density_scale is None:
            density_scale = float(res[-1])
        return cls(tuple(resolutions), n_instance, params, np.full(3, 0.5), float(density_scale))

    def level(self, group: str, lv: int) -> np.ndarray:
        """View of one level as an (R, R, R, C) array indexed [x, y, z]."""
        R = self.resolutions[lv]
        a = self.params[group][self.offs[lv]:self.offs[lv] + R ** 3]
        return a.reshape(R, R, R, -1)

    def copy(self) -> "MultiResGrid":
        return MultiResGrid(self.resolutions, self.n_instance,
                            {k: v.copy() for k, v in self.params.items()},
                            self.background.copy(), self.density_scale)

    def reset_instance(self, n_instance: int, init_std: float = 0.0, seed: int = 0) -> None:
        """Replace the instance channels with ``n_instance`` fresh ones."""
        rng = np.random.default_rng(seed)
        a = np.zeros((self.n_vertices, int(n_instance)))
        if init_std:
            a += init_std * rng.standard_normal(a.shape)
        self.params["instance"] = a
        self.n_instance = int(n_instance)

    def raw(self, group: str, points: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return _kernels.query_raw(pts, self.res, self.offs, self.params[group])

    def query(self, points):
        """Activated (sigma, color, semantic logits, instance outputs) at points.

        Points outside the unit cube get zero density.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        inside = np.all((pts >= 0) & (pts <= 1), axis=1)
        sigma = np.where(inside, softplus(self.raw("density", pts)[:, 0]), 0.0)
        color = sigmoid(self.raw("color", pts))
        sem = self.raw("semantic", pts)
        inst = self.raw("instance", pts)
        return sigma, color, sem, inst

    def state_arrays(self) -> dict:
        out = {f"{g}": self.params[g] for g in GROUPS}
        out["background"] = self.background
        return out
