import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ulft.errors import HeightError
from ulft.geometry import Camera, Intrinsics, Pose
from ulft.grouping import (build_guidance_map, close_mask, filter_nested, group_all_views,
                           group_instances, iom, mask_height, match_and_expand, project_mask,
                           segment_map, select_representative, singleton_groups)
from ulft.labels import MaskSet

N = 14   # image side of the oracle fixtures


# ---------------------------------------------------------------- brute-force oracle

def _pixel_warp(u, v, d, cam_j, cam_i):
    Kj, Ki = cam_j.intrinsics.K, cam_i.intrinsics.K
    X = np.linalg.inv(cam_j.pose.matrix()) @ np.append(d * (np.linalg.inv(Kj) @ [u, v, 1.0]), 1)
    Xi = cam_i.pose.matrix() @ X
    x = Ki @ Xi[:3]
    return x[0] / x[2], x[1] / x[2], Xi[2]


def _closing(m):
    H, W = m.shape

    def nb(a, r, c, fill):
        vals = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                vals.append(a[rr, cc] if 0 <= rr < H and 0 <= cc < W else fill)
        return vals

    dil = np.array([[any(nb(m, r, c, False)) for c in range(W)] for r in range(H)])
    ero = np.array([[all(nb(dil, r, c, False)) for c in range(W)] for r in range(H)])
    return ero | m


def _project(mask, depth_j, cam_j, cam_i, depth_i, eps):
    H, W = depth_i.shape
    out = np.zeros((H, W), dtype=bool)
    for r, c in zip(*np.nonzero(mask)):
        d = depth_j[r, c]
        if not (math.isfinite(d) and d > 0):
            continue
        u, v, z = _pixel_warp(c + 0.5, r + 0.5, d, cam_j, cam_i)
        if z <= 0:
            continue
        cc, rr = math.floor(u), math.floor(v)
        if 0 <= cc < W and 0 <= rr < H and abs(z - depth_i[rr, cc]) < eps:
            out[rr, cc] = True
    return _closing_near(out) if out.any() else out


def _closing_near(m):
    # closing only touches pixels within two of the mask, so work on that window
    rows, cols = np.nonzero(m)
    r0, r1 = max(rows.min() - 2, 0), min(rows.max() + 3, m.shape[0])
    c0, c1 = max(cols.min() - 2, 0), min(cols.max() + 3, m.shape[1])
    out = m.copy()
    out[r0:r1, c0:c1] = _closing(m[r0:r1, c0:c1])
    return out


def oracle_grouping(masksets, depths, cams, eps, tau):
    """Guidance map and groups of every view, one pixel at a time."""
    result = []
    for i, ms in enumerate(masksets):
        proj = []
        for j, other in enumerate(masksets):
            if j == i:
                continue
            for m in other.ids:
                p = _project(other.mask(m), depths[j], cams[j], cams[i], depths[i], eps)
                if p.any():
                    proj.append(p)
        cross = {}
        for k in ms.ids:
            a = ms.mask(k)
            u = a.copy()
            for p in proj:
                if (a & p).sum() / min(a.sum(), p.sum()) > tau:
                    u |= p
            cross[k] = u
        U = np.zeros(ms.shape, dtype=np.int64)
        for k in sorted(cross, key=lambda k: (cross[k].sum(), k)):
            U[cross[k]] = k
        token = {}
        for m in ms.ids:
            vals = U[ms.mask(m)]
            best, cnt = None, -1
            for v in sorted(set(vals.tolist())):
                c = int((vals == v).sum())
                if c > cnt:
                    best, cnt = v, c
            token[m] = best if (best != 0 and cnt > 0.5 * ms.area(m)) else -m
        groups = {}
        for m in ms.ids:
            groups.setdefault(token[m], []).append(m)
        result.append((U, sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])))
    return result


# ---------------------------------------------------------------- random fixtures

def _plane_view(rng):
    intr = Intrinsics.from_fov(N, N, 60.0)
    eye = np.array([0.5, 0.5, 1.0]) + rng.uniform(-0.12, 0.12, 3)
    target = np.array([0.5, 0.5, 0.0]) + rng.uniform(-0.1, 0.1, 3)
    cam = Camera(intr, Pose.look_at(eye, target, (0.0, 1.0, 0.0)), 1e-3, 10.0)
    # planar depth of the ground plane z = 0, plus a raised block and holes
    v, u = np.mgrid[0:N, 0:N]
    dc = np.stack([(u + 0.5 - intr.cx) / intr.fx, (v + 0.5 - intr.cy) / intr.fy,
                   np.ones((N, N))], -1)
    dw = dc @ cam.pose.rotation
    depth = -cam.center[2] / dw[..., 2]
    r0, c0 = rng.integers(0, N - 4, 2)
    depth[r0:r0 + 4, c0:c0 + 4] *= rng.uniform(0.6, 0.9)
    depth[rng.random((N, N)) < 0.03] = np.nan
    return cam, depth


def _random_maskset(rng):
    ms = MaskSet((N, N))
    ids = rng.permutation(60)[:int(rng.integers(1, 13))] + 1
    for mid in ids:
        h, w = rng.integers(2, 8, 2)
        r, c = rng.integers(0, N - h), rng.integers(0, N - w)
        m = np.zeros((N, N), dtype=bool)
        m[r:r + h, c:c + w] = True
        if rng.random() < 0.3:
            m &= rng.random((N, N)) < 0.8
        if not m.any():
            m[r, c] = True
        ms.add(int(mid), np.flatnonzero(m))
    return ms


def test_grouping_matches_bruteforce_oracle():
    rng = np.random.default_rng(2024)
    for case in range(100):
        n_views = int(rng.integers(2, 5))
        views = [_plane_view(rng) for _ in range(n_views)]
        cams = [v[0] for v in views]
        depths = [v[1] for v in views]
        masksets = [_random_maskset(rng) for _ in range(n_views)]
        eps = float(rng.uniform(0.01, 0.08))
        tau = float(rng.choice([0.3, 0.5, 0.7]))
        maps, tables = group_all_views(masksets, depths, cams, eps, tau)
        ref = oracle_grouping(masksets, depths, cams, eps, tau)
        for i, ((U, groups), gm, tb) in enumerate(zip(ref, maps, tables)):
            assert np.array_equal(gm.U, U), (case, i)
            assert tb.groups == groups, (case, i)


# ---------------------------------------------------------------- unit behaviour

def test_closing_keeps_original_pixels():
    m = np.zeros((6, 6), dtype=bool)
    m[0, 0] = True
    m[2, 2] = m[2, 4] = True
    out = close_mask(m)
    assert out[0, 0] and out[2, 3]


def test_project_mask_identity_camera_is_copy(rng):
    cam, depth = _plane_view(rng)
    m = np.zeros((N, N), dtype=bool)
    m[3:6, 3:6] = True
    assert np.array_equal(project_mask(m, depth, cam, cam, depth, 0.01), m)


def test_iom_and_match():
    a = np.zeros((4, 4), dtype=bool)
    a[:2] = True
    b = np.zeros((4, 4), dtype=bool)
    b[:1, :2] = True
    assert iom(a, b) == 1.0 and iom(a, np.zeros_like(a)) == 0.0
    exp, u = match_and_expand(a, [b, ~a], tau=0.5)
    assert len(exp) == 1 and np.array_equal(u, a)
    exp, u = match_and_expand(a, [], 0.5)
    assert exp == [] and np.array_equal(u, a)


def test_single_view_guidance_is_painted_masks():
    ms = MaskSet((4, 4))
    ms.add(5, np.arange(8))
    ms.add(2, np.arange(4))
    cam, depth = _plane_view(np.random.default_rng(0))
    gm = build_guidance_map(0, [ms], [depth], [cam], 0.01)
    # painting runs small to large, so the enclosing mask covers the nested one
    assert gm.U.reshape(-1)[:8].tolist() == [5] * 8 and not gm.U.reshape(-1)[8:].any()
    assert gm.order == [2, 5]
    assert group_instances(ms, gm.U).groups == [[2, 5]]


def _brute_filter(ms, heights, thr, ratio):
    keep = []
    for m in ms.ids:
        a = set(ms.pixels[m].tolist())
        nested = any(len(a & set(ms.pixels[o].tolist())) / len(a) > ratio
                     for o in ms.ids if o != m)
        if not (nested and heights[m] < thr):
            keep.append(m)
    return keep


@given(st.integers(0, 10_000))
def test_filter_nested_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    ms = _random_maskset(rng)
    heights = {m: float(rng.uniform(0, 20)) for m in ms.ids}
    ratio = float(rng.uniform(0.5, 0.95))
    assert filter_nested(ms, heights, 10.0, ratio).ids == sorted(_brute_filter(ms, heights,
                                                                              10.0, ratio))


def test_mask_height_in_meters():
    intr = Intrinsics(4.0, 4.0, 2.0, 2.0, 4, 4)
    # camera looking along +y so image rows map to world height
    R = np.array([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])
    cam = Camera(intr, Pose.from_center(R, [0, 0, 0]))
    depth = np.full((4, 4), 2.0)
    mask = np.zeros((4, 4), dtype=bool)
    mask[0:4, 1] = True
    # rows 0.5 .. 3.5 span 3 px / fy * depth = 1.5 scene units
    assert abs(mask_height(mask, depth, cam, 10.0) - 15.0) < 1e-9
    with pytest.raises(HeightError):
        mask_height(mask, np.full((4, 4), np.nan), cam, 10.0)


def test_segment_map_draws_groups_large_first():
    ms = MaskSet((3, 3))
    ms.add(1, np.arange(9))
    ms.add(2, np.array([4]))
    ms.add(3, np.array([0, 1]))
    table = group_instances(ms, np.array([[7, 7, 7], [7, 0, 7], [7, 7, 7]]))
    assert table.groups == [[1, 3], [2]]
    seg = segment_map(ms, table)
    assert seg[1, 1] == 2 and seg[0, 0] == 1 and seg[2, 2] == 1
    single = singleton_groups(ms)
    assert single.groups == [[1], [2], [3]]


def test_select_representative_is_stable():
    g = [4, 9, 11]
    picks = {select_representative(g, it, 1, 0, 0) for it in range(50)}
    assert picks <= set(g) and len(picks) > 1
    assert select_representative(g, 3, 1, 2, 5) == select_representative(g, 3, 1, 2, 5)
    assert select_representative([7], 0, 0) == 7
