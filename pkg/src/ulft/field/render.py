"""Volume rendering of the voxel field and its analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Camera, generate_rays
from . import _kernels
from .grid import MultiResGrid

_EMPTY = np.zeros((0, 0))


@dataclass(eq=False)
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    zfac: np.ndarray   # camera-frame z of each unit direction (ray length -> planar depth)
    t_lo: np.ndarray
    t_hi: np.ndarray

    def __len__(self):
        return len(self.origins)

    def subset(self, sel) -> "RayBatch":
        return RayBatch(self.origins[sel], self.dirs[sel], self.zfac[sel],
                        self.t_lo[sel], self.t_hi[sel])


def box_interval(origins, dirs, lo, hi):
    """Parametric entry/exit of rays through an axis-aligned box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (np.asarray(lo) - origins) * inv
        t1 = (np.asarray(hi) - origins) * inv
    tmin = np.nanmax(np.fmin(t0, t1), axis=1)
    tmax = np.nanmin(np.fmax(t0, t1), axis=1)
    return tmin, tmax


def make_rays(camera: Camera, pixels=None, box=((0, 0, 0), (1, 1, 1))) -> RayBatch:
    """Rays through pixel centers (all pixels by default), clipped to ``box``."""
    if pixels is None:
        pixels = camera.pixel_centers()
    o, d, zf = generate_rays(camera, pixels)
    tmin, tmax = box_interval(o, d, *box)
    t_lo = np.maximum(tmin, camera.near)
    t_hi = np.minimum(tmax, camera.far)
    t_hi = np.where(t_hi > t_lo, t_hi, t_lo)
    return RayBatch(o, d, zf, t_lo, t_hi)


def concat_rays(batches) -> RayBatch:
    return RayBatch(*(np.concatenate([getattr(b, f) for b in batches])
                      for f in ("origins", "dirs", "zfac", "t_lo", "t_hi")))


def composite(sigma_delta: np.ndarray, values: np.ndarray, background=None):
    """Alpha-composite per-sample values given optical thicknesses.

    ``sigma_delta`` is (..., K), ``values`` (..., K, C).  Returns
    ``(rendered, weights)``.  Reference path for tests and small inputs.
    """
    sd = np.asarray(sigma_delta, dtype=np.float64)
    acc = np.cumsum(sd, axis=-1)
    T = np.exp(-np.concatenate([np.zeros(sd.shape[:-1] + (1,)), acc[..., :-1]], axis=-1))
    w = T * (1 - np.exp(-sd))
    out = np.einsum("...k,...kc->...c", w, values)
    if background is not None:
        out = out + (1 - w.sum(-1))[..., None] * np.asarray(background)
    return out, w


@dataclass(eq=False)
class RenderOut:
    color: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray
    opacity: np.ndarray
    weights: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)

    @property
    def semantic_probs(self) -> np.ndarray:
        return softmax(self.semantic)


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def render(grid: MultiResGrid, rays: RayBatch, n_samples: int = 48, jitter=None,
           heads=("color", "semantic", "instance"), w_floor: float = 0.0,
           instance_table: np.ndarray | None = None) -> RenderOut:
    """Render a batch of rays.

    ``jitter`` is a (B, K) array of stratification offsets in [0, 1);
    None means sample midpoints.  ``instance_table`` overrides the instance
    channels (used to render the slowly updated embedding copy).
    """
    B, K = len(rays), int(n_samples)
    if jitter is None:
        jitter = np.full((B, K), 0.5)
    p = grid.params
    col = p["color"] if "color" in heads else _EMPTY
    sem = p["semantic"] if "semantic" in heads else _EMPTY
    if "instance" in heads:
        inst = p["instance"] if instance_table is None else instance_table
    else:
        inst = _EMPTY
    nc, ns, ni = col.shape[1], sem.shape[1], inst.shape[1]
    buf = {
        "t_s": np.zeros((B, K)), "delta": np.zeros((B, K)), "raw_d": np.zeros((B, K)),
        "w_s": np.zeros((B, K)), "T_next": np.zeros((B, K)),
        "c_s": np.zeros((B, K, nc)), "s_s": np.zeros((B, K, ns)), "i_s": np.zeros((B, K, ni)),
        "cidx": np.zeros((B, K, len(grid.res), 8), dtype=np.int64),
        "cwts": np.zeros((B, K, len(grid.res), 8)),
    }
    out_c = np.zeros((B, nc))
    out_d = np.zeros(B)
    out_o = np.zeros(B)
    out_s = np.zeros((B, ns))
    out_i = np.zeros((B, ni))
    _kernels.render_forward(
        rays.origins, rays.dirs, rays.t_lo, rays.t_hi, rays.zfac,
        np.ascontiguousarray(jitter, dtype=np.float64), K, grid.res, grid.offs,
        p["density"], col, sem, inst, grid.background, grid.density_scale, float(w_floor),
        buf["t_s"], buf["delta"], buf["raw_d"], buf["w_s"], buf["T_next"],
        buf["c_s"], buf["s_s"], buf["i_s"], buf["cidx"], buf["cwts"], out_c, out_d, out_o, out_s, out_i)
    buf.update(rays=rays, K=K, w_floor=float(w_floor), heads=tuple(heads))
    return RenderOut(out_c, out_d, out_s, out_i, out_o, buf["w_s"], buf)


@dataclass(eq=False)
class Gradients:
    """Dense gradient buffers plus a per-vertex flag of rows that were hit."""

    params: dict
    background: np.ndarray
    touched: np.ndarray

    @classmethod
    def zeros_like(cls, grid: MultiResGrid) -> "Gradients":
        return cls({g: np.zeros_like(a) for g, a in grid.params.items()}, np.zeros(3),
                   np.zeros(grid.n_vertices, dtype=bool))

    def clear(self):
        for a in self.params.values():
            a[self.touched] = 0.0
        self.background[:] = 0.0
        self.touched[:] = False


def backward(grid: MultiResGrid, out: RenderOut, grads: dict, train_geometry: bool = True,
             train_heads=("semantic", "instance"), accum: Gradients | None = None
             ) -> Gradients:
    """Backpropagate gradients of rendered outputs into grid parameters.

    ``grads`` maps any of ``color``, ``depth``, ``semantic``, ``instance`` to
    arrays shaped like the corresponding rendered output.
    """
    c = out.cache
    rays = c["rays"]
    B, K = len(rays), c["K"]
    if train_geometry and c["w_floor"] > 0:
        raise ValueError("geometry gradients need an unpruned forward pass (w_floor=0)")
    acc = accum if accum is not None else Gradients.zeros_like(grid)
    gC = np.ascontiguousarray(grads.get("color", np.zeros((B, 3))), dtype=np.float64)
    if gC.shape[1] != 3:
        gC = np.zeros((B, 3))
    gD = np.ascontiguousarray(grads.get("depth", np.zeros(B)), dtype=np.float64)
    gS = np.ascontiguousarray(grads.get("semantic", np.zeros((B, c["s_s"].shape[2]))),
                              dtype=np.float64)
    gI = np.ascontiguousarray(grads.get("instance", np.zeros((B, c["i_s"].shape[2]))),
                              dtype=np.float64)
    g_sem = acc.params["semantic"] if ("semantic" in train_heads and gS.shape[1]) else _EMPTY
    g_inst = acc.params["instance"] if ("instance" in train_heads and gI.shape[1]) else _EMPTY
    if g_inst.shape[1] and g_inst.shape[1] != gI.shape[1]:
        raise ValueError("instance gradient width does not match the grid")
    c_s = c["c_s"]
    if train_geometry and c_s.shape[2] == 0:
        c_s = np.zeros((B, K, 3))
    span = rays.t_hi - rays.t_lo
    g_raw_d = np.zeros((B, K))
    if train_geometry:
        _kernels.sample_grads(rays.zfac, span, K, grid.density_scale, grid.background,
                              c["t_s"], c["delta"], c["raw_d"], c["w_s"], c["T_next"],
                              c_s, c["s_s"], c["i_s"], gC, gD, gS, gI, g_raw_d)
    _kernels.scatter_grads(span, K, c["w_floor"], c["w_s"], c_s, c["cidx"], c["cwts"],
                           out.opacity, gC, gS, gI, g_raw_d, bool(train_geometry),
                           acc.params["density"], acc.params["color"], g_sem, g_inst,
                           acc.background, acc.touched)
    return acc


def render_image(grid: MultiResGrid, camera: Camera, n_samples: int = 48,
                 box=((0, 0, 0), (1, 1, 1)), heads=("color",), chunk: int = 4096,
                 w_floor: float = 0.0, instance_table=None) -> dict:
    """Render every pixel of ``camera`` with midpoint samples.

    Returns a dict of (H, W, ...) images: ``color``, ``depth``, ``opacity``
    and, when requested, ``semantic`` logits and ``instance`` outputs.
    """
    rays = make_rays(camera, box=box)
    H, W = camera.height, camera.width
    parts = []
    for s in range(0, len(rays), chunk):
        sel = slice(s, s + chunk)
        parts.append(render(grid, rays.subset(sel), n_samples, heads=heads, w_floor=w_floor,
                            instance_table=instance_table))
    out = {
        "depth": np.concatenate([p.depth for p in parts]).reshape(H, W),
        "opacity": np.concatenate([p.opacity for p in parts]).reshape(H, W),
    }
    if "color" in heads:
        out["color"] = np.concatenate([p.color for p in parts]).reshape(H, W, -1)
    if "semantic" in heads:
        out["semantic"] = np.concatenate([p.semantic for p in parts]).reshape(H, W, -1)
    if "instance" in heads:
        out["instance"] = np.concatenate([p.instance for p in parts]).reshape(H, W, -1)
    return out


def surface_depth(depth: np.ndarray, opacity: np.ndarray, min_opacity: float = 0.5) -> np.ndarray:
    """Opacity-normalised planar depth; NaN where the ray is mostly empty.

    Rendered depth is a weighted sum that treats the missing mass as depth
    zero, so dividing by the accumulated opacity removes the short bias.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        d = depth / opacity
    return np.where(opacity >= min_opacity, d, np.nan)
