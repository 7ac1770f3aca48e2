"""Geometry-guided mask filtering and cross-view instance grouping.

For every view i, masks from all other views are warped into i through
rendered depth.  A mask of view i absorbs every warped mask it overlaps
by more than ``tau`` of the smaller area; the union is its cross-view
mask.  Cross-view masks are painted from small to large into the guidance
map U_i, and masks of view i whose pixels mostly carry one U value end
up in one group.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse

from .errors import HeightError
from .geometry import Camera, reproject_pixels, unproject
from .labels import MaskSet

_SQUARE = np.ones((3, 3), dtype=bool)


# ---------------------------------------------------------------- filtering

def mask_height(mask, depth: np.ndarray, camera: Camera, meters_per_unit: float) -> float:
    """Vertical extent of the back-projected mask pixels, in meters."""
    H, W = depth.shape
    pix = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
    d = depth.reshape(-1)[pix]
    ok = np.isfinite(d) & (d > 0)
    if not ok.any():
        raise HeightError("mask has no pixel with valid depth")
    r, c = np.divmod(pix[ok], W)
    pts = unproject(camera, np.column_stack([c + 0.5, r + 0.5]), d[ok])
    return float((pts[:, 2].max() - pts[:, 2].min()) * meters_per_unit)


def incidence(ms: MaskSet, ids=None) -> sparse.csr_matrix:
    ids = ms.ids if ids is None else ids
    rows = np.concatenate([np.full(ms.area(m), i) for i, m in enumerate(ids)]) if ids else \
        np.zeros(0, dtype=np.int64)
    cols = np.concatenate([ms.pixels[m] for m in ids]) if ids else np.zeros(0, dtype=np.int64)
    n_px = ms.shape[0] * ms.shape[1]
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids), n_px))


def overlap_counts(ms: MaskSet, ids=None) -> np.ndarray:
    """Dense matrix of pairwise intersection sizes."""
    M = incidence(ms, ids)
    return np.asarray((M @ M.T).todense(), dtype=np.int64)


def filter_nested(ms: MaskSet, heights: dict, threshold_m: float = 10.0,
                  nest_ratio: float = 0.8) -> MaskSet:
    """Drop masks that sit inside another mask and are physically short."""
    ids = ms.ids
    if not ids:
        return ms.subset([])
    inter = overlap_counts(ms, ids)
    area = np.diag(inter).astype(np.float64)
    frac = inter / area[:, None]
    np.fill_diagonal(frac, 0.0)
    nested = (frac > nest_ratio).any(axis=1)
    keep = [m for m, n in zip(ids, nested) if not (n and heights[m] < threshold_m)]
    return ms.subset(keep)


def mask_heights(ms: MaskSet, depth, camera, meters_per_unit) -> dict:
    out = {}
    for m in ms.ids:
        try:
            out[m] = mask_height(ms.pixels[m], depth, camera, meters_per_unit)
        except HeightError:
            out[m] = 0.0
    return out


# ---------------------------------------------------------------- projection

def warp_pixels(pix: np.ndarray, depth_j, cam_j: Camera, cam_i: Camera, depth_i,
                eps_d: float) -> np.ndarray:
    """Flat target indices in view i for flat source pixels of view j (-1 if lost)."""
    Hj, Wj = depth_j.shape
    d = depth_j.reshape(-1)[pix]
    r, c = np.divmod(pix, Wj)
    out = np.full(len(pix), -1, dtype=np.int64)
    ok = np.isfinite(d) & (d > 0)
    if not ok.any():
        return out
    uv, z = reproject_pixels(np.column_stack([c[ok] + 0.5, r[ok] + 0.5]), d[ok], cam_j, cam_i)
    with np.errstate(invalid="ignore"):
        cc = np.floor(uv[:, 0])
        rr = np.floor(uv[:, 1])
    inside = (z > 0) & (cc >= 0) & (cc < cam_i.width) & (rr >= 0) & (rr < cam_i.height)
    tgt = np.full(len(z), -1, dtype=np.int64)
    ti = rr[inside].astype(np.int64) * cam_i.width + cc[inside].astype(np.int64)
    vis = np.abs(z[inside] - depth_i.reshape(-1)[ti]) < eps_d
    tgt[np.flatnonzero(inside)[vis]] = ti[vis]
    out[ok] = tgt
    return out


def close_mask(m: np.ndarray) -> np.ndarray:
    """3x3 morphological closing that never removes original pixels."""
    return ndimage.binary_closing(m, _SQUARE) | m


def project_mask(mask, depth_j, cam_j: Camera, cam_i: Camera, depth_i, eps_d: float
                 ) -> np.ndarray:
    """Binary mask of view j warped into view i (occlusion-tested, then closed)."""
    if cam_j is cam_i:
        return np.asarray(mask, dtype=bool).copy()
    pix = np.flatnonzero(mask)
    tgt = warp_pixels(pix, depth_j, cam_j, cam_i, depth_i, eps_d)
    out = np.zeros(cam_i.height * cam_i.width, dtype=bool)
    out[tgt[tgt >= 0]] = True
    out = out.reshape(cam_i.height, cam_i.width)
    return close_mask(out) if out.any() else out


# ---------------------------------------------------------------- matching

def iom(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over the smaller area (0 when either is empty)."""
    na, nb = np.count_nonzero(a), np.count_nonzero(b)
    if na == 0 or nb == 0:
        return 0.0
    return np.count_nonzero(a & b) / min(na, nb)


def match_and_expand(mask: np.ndarray, projected, tau: float = 0.5):
    """Expanded masks for every projected mask matching ``mask``, and their union.

    With no match the cross-view mask is the mask itself.
    """
    expanded = [mask | p for p in projected if iom(mask, p) > tau]
    if not expanded:
        return [], mask.copy()
    u = np.zeros_like(mask)
    for e in expanded:
        u |= e
    return expanded, u


@dataclass(eq=False)
class GuidanceMap:
    view: int
    U: np.ndarray                       # (H, W) int64, 0 = unassigned
    registry: dict = field(default_factory=dict)   # mask id -> cross-view area
    order: list = field(default_factory=list)      # painting order


def paint_guidance(shape, cross_masks: dict) -> tuple:
    """Layer cross-view masks ascending by (area, id); later ones overwrite."""
    U = np.zeros(shape, dtype=np.int64)
    areas = {k: int(np.count_nonzero(m)) for k, m in cross_masks.items()}
    order = sorted(cross_masks, key=lambda k: (areas[k], k))
    for k in order:
        U[cross_masks[k]] = k
    return U, areas, order


def project_all(i: int, masksets, depths, cameras, eps_d: float) -> np.ndarray:
    """Stack (n, H*W) of every other view's masks warped into view i."""
    cam_i = cameras[i]
    n_px = cam_i.height * cam_i.width
    out = []
    for j, ms in enumerate(masksets):
        if j == i or len(ms) == 0:
            continue
        ids = ms.ids
        allpix = np.concatenate([ms.pixels[m] for m in ids])
        tgt = warp_pixels(allpix, depths[j], cameras[j], cam_i, depths[i], eps_d)
        start = 0
        for m in ids:
            t = tgt[start:start + ms.area(m)]
            start += ms.area(m)
            t = t[t >= 0]
            if len(t) == 0:
                continue
            b = np.zeros(n_px, dtype=bool)
            b[t] = True
            b = close_mask(b.reshape(cam_i.height, cam_i.width)).reshape(-1)
            out.append(b)
    if not out:
        return np.zeros((0, n_px), dtype=bool)
    return np.stack(out)


def build_guidance_map(i: int, masksets, depths, cameras, eps_d: float, tau: float = 0.5,
                       projected: np.ndarray | None = None) -> GuidanceMap:
    """Cross-view guidance map of view i from every view's (filtered) masks."""
    ms = masksets[i]
    H, W = ms.shape
    P = project_all(i, masksets, depths, cameras, eps_d) if projected is None else projected
    Pf = P.astype(np.float64)
    p_area = P.sum(axis=1)
    cross = {}
    for k in ms.ids:
        a = np.zeros(H * W, dtype=bool)
        a[ms.pixels[k]] = True
        if len(P):
            inter = Pf @ a
            ratio = inter / np.minimum(p_area, ms.area(k))
            hit = ratio > tau
        else:
            hit = np.zeros(0, dtype=bool)
        u = a | P[hit].any(axis=0) if hit.any() else a
        cross[k] = u.reshape(H, W)
    U, areas, order = paint_guidance((H, W), cross)
    return GuidanceMap(i, U, areas, order)


# ---------------------------------------------------------------- grouping

@dataclass(eq=False)
class GroupTable:
    view: int
    groups: list                        # list of sorted mask-id lists, ordered by first id
    group_of: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"view": self.view, "groups": [list(map(int, g)) for g in self.groups]}


def dominant_value(values: np.ndarray):
    """Most frequent value and its count (ties go to the smaller value)."""
    vals, counts = np.unique(values, return_counts=True)
    j = int(np.argmax(counts))
    return int(vals[j]), int(counts[j])


def group_instances(ms: MaskSet, U: np.ndarray, view: int = 0) -> GroupTable:
    """Masks whose pixels are mostly covered by one U value form a group."""
    flat = U.reshape(-1)
    token = {}
    for m in ms.ids:
        v, n = dominant_value(flat[ms.pixels[m]])
        token[m] = v if (v != 0 and n > 0.5 * ms.area(m)) else -m
    buckets = {}
    for m in ms.ids:
        buckets.setdefault(token[m], []).append(m)
    groups = sorted((sorted(g) for g in buckets.values()), key=lambda g: g[0])
    table = GroupTable(view, groups)
    for gi, g in enumerate(groups):
        for m in g:
            table.group_of[m] = gi
    return table


def singleton_groups(ms: MaskSet, view: int = 0) -> GroupTable:
    groups = [[m] for m in ms.ids]
    return GroupTable(view, groups, {m: i for i, m in enumerate(ms.ids)})


def select_representative(group, iteration: int, seed: int, view: int = 0,
                          group_id: int = 0) -> int:
    """Uniform pick from ``group``, fixed by (seed, iteration, view, group id)."""
    g = list(group)
    if len(g) == 1:
        return g[0]
    rng = np.random.default_rng([int(seed), int(iteration), int(view), int(group_id)])
    return g[int(rng.integers(len(g)))]


def segment_map(ms: MaskSet, table: GroupTable, reps=None) -> np.ndarray:
    """Per-pixel training segment of one view (0 = none).

    Only each group's representative mask (all masks when ``reps`` is None)
    is drawn; larger masks first so nested ones stay visible.  Pixel values
    are group index + 1.
    """
    H, W = ms.shape
    seg = np.zeros(H * W, dtype=np.int64)
    chosen = []
    for gi, g in enumerate(table.groups):
        members = g if reps is None else [reps[gi]]
        chosen += [(ms.area(m), m, gi) for m in members]
    for _, m, gi in sorted(chosen, key=lambda t: (-t[0], t[1])):
        seg[ms.pixels[m]] = gi + 1
    return seg.reshape(H, W)


def group_all_views(masksets, depths, cameras, eps_d: float, tau: float = 0.5):
    """Guidance maps and group tables for every view."""
    maps, tables = [], []
    for i in range(len(masksets)):
        g = build_guidance_map(i, masksets, depths, cameras, eps_d, tau)
        maps.append(g)
        tables.append(group_instances(masksets[i], g.U, i))
    return maps, tables
