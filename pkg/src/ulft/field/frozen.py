"""Cached rendering for stages that keep geometry fixed.

With density frozen, each ray's compositing weights never change, so the
rendered semantic or instance output is a fixed linear map of the channel
table.  The map is stored as a sparse row operator and reused across
iterations, which turns head training into sparse products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .grid import MultiResGrid
from .render import RayBatch


@dataclass(eq=False)
class WeightOperator:
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    opacity: np.ndarray
    depth: np.ndarray

    def __len__(self):
        return len(self.opacity)

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def _rows(self, rows):
        if rows is None:
            return np.arange(len(self), dtype=np.int64)
        return np.ascontiguousarray(rows, dtype=np.int64)

    def apply(self, table: np.ndarray, rows=None) -> np.ndarray:
        rows = self._rows(rows)
        out = np.zeros((len(rows), table.shape[1]))
        _kernels.operator_apply(self.indptr, self.indices, self.data, rows, table, out)
        return out

    def scatter(self, rows, grad: np.ndarray, out: np.ndarray, touched: np.ndarray) -> None:
        rows = self._rows(rows)
        grad = np.ascontiguousarray(grad, dtype=np.float64)
        _kernels.operator_scatter(self.indptr, self.indices, self.data, rows, grad, out, touched)


def build_operator(grid: MultiResGrid, rays: RayBatch, n_samples: int = 48,
                   w_floor: float = 1e-4) -> WeightOperator:
    """Weight operator for midpoint samples; weights below ``w_floor`` are dropped."""
    arrs = _kernels.build_operator(rays.origins, rays.dirs, rays.t_lo, rays.t_hi, rays.zfac,
                                   int(n_samples), grid.res, grid.offs, grid.params["density"],
                                   grid.density_scale, float(w_floor))
    return WeightOperator(*arrs)
