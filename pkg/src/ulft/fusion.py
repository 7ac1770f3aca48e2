"""Scale-adaptive semantic label fusion and multi-view label conflict.

Each original view is paired with a camera pulled back along its optical
axis.  Labels predicted at the distant viewpoint are pulled back into the
original view through rendered depth, overriding the building/road
decision wherever the two depths agree.  Cars and trees are then snapped
to matching class-agnostic masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InputError, PreconditionError, ReportError
from .field.render import render_image, surface_depth
from .geometry import Camera, elevate_camera, project_points, reproject_pixels
from .scene import NUM_CLASSES, SKY, ClassId

ORIGINAL, FAR_VIEW, AGNOSTIC = 0, 1, 2

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(eq=False)
class FusedSemanticSet:
    semantic: list            # per view (H, W) uint8
    provenance: list          # per view (H, W) uint8 in {ORIGINAL, FAR_VIEW, AGNOSTIC}
    far_cameras: list = field(default_factory=list)
    far_semantic: list = field(default_factory=list)


def pull_far_labels(sem: np.ndarray, depth: np.ndarray, cam: Camera, far_cam: Camera,
                    far_sem: np.ndarray, far_depth: np.ndarray, eps_d: float,
                    both_directions: bool = True):
    """Inverse-map far-view building/road labels into one original view.

    Returns ``(fused, changed)`` where ``changed`` marks pixels rewritten.
    """
    H, W = sem.shape
    pix = cam.pixel_centers()
    d = depth.reshape(-1)
    ok = np.isfinite(d) & (d > 0) & (sem.reshape(-1) != SKY)
    uv, z = reproject_pixels(pix[ok], d[ok], cam, far_cam)
    col = np.floor(uv[:, 0]).astype(np.int64)
    row = np.floor(uv[:, 1]).astype(np.int64)
    inside = (z > 0) & (col >= 0) & (col < far_cam.width) & (row >= 0) & (row < far_cam.height)
    src = np.flatnonzero(ok)[inside]
    row, col, z = row[inside], col[inside], z[inside]
    agree = np.abs(z - far_depth[row, col]) < eps_d
    src, row, col = src[agree], row[agree], col[agree]
    far_lab = far_sem[row, col]
    flat = sem.reshape(-1).copy()
    cur = flat[src]
    to_b = (far_lab == ClassId.BUILDING) & (cur != ClassId.BUILDING)
    to_r = (far_lab == ClassId.ROAD) & (cur == ClassId.BUILDING) if both_directions \
        else np.zeros_like(to_b)
    flat[src[to_b]] = ClassId.BUILDING
    flat[src[to_r]] = ClassId.ROAD
    changed = np.zeros(H * W, dtype=bool)
    changed[src[to_b | to_r]] = True
    return flat.reshape(H, W), changed.reshape(H, W)


def refine_small_classes(sem: np.ndarray, agnostic, iou_threshold: float = 0.5):
    """Snap car/tree components to class-agnostic masks with IoU above the threshold.

    Pixels the snapped mask gives up take the most common other label on
    the component's outer ring.  Returns ``(refined, changed)``.
    """
    out = sem.copy()
    changed = np.zeros(sem.shape, dtype=bool)
    if agnostic is None or len(agnostic) == 0:
        return out, changed
    masks = {m: agnostic.mask(m) for m in agnostic.ids}
    for cls in (ClassId.CAR, ClassId.TREE):
        lab, n = ndimage.label(sem == cls, _CROSS)
        for j in range(1, n + 1):
            comp = lab == j
            best, best_iou = None, iou_threshold
            for mid, m in masks.items():
                inter = np.count_nonzero(comp & m)
                if inter == 0:
                    continue
                iou = inter / np.count_nonzero(comp | m)
                if iou > best_iou:
                    best, best_iou = mid, iou
            if best is None:
                continue
            m = masks[best] & (sem != SKY)
            lost = comp & ~m
            if lost.any():
                ring = ndimage.binary_dilation(comp, _CROSS) & ~comp & (sem != SKY)
                vals = sem[ring]
                vals = vals[vals != cls]
                fill = np.bincount(vals, minlength=NUM_CLASSES).argmax() if len(vals) \
                    else ClassId.GROUND
                out[lost] = fill
            out[m] = cls
            changed |= (m & ~comp) | lost
    return out, changed


def fuse_semantics(views, grid, segmenter, offset: float = 0.3, eps_d: float | None = None,
                   agnostic=None, both_directions: bool = True, n_samples: int = 48,
                   box=((0, 0, 0), (1, 1, 1)), iou_threshold: float = 0.5
                   ) -> FusedSemanticSet:
    """Fuse labels for every view.

    ``views`` is a list of dicts with ``camera``, ``semantic`` (noisy map)
    and ``depth`` (rendered planar depth).  ``segmenter(camera, view_key)``
    labels the far viewpoints.  ``agnostic`` is an optional per-view list of
    class-agnostic mask sets for small-class refinement.
    """
    if grid is None:
        raise PreconditionError("fusion needs a trained geometry field")
    if eps_d is None or eps_d <= 0:
        raise InputError("eps_d must be a positive depth tolerance")
    fused, prov, far_cams, far_sems = [], [], [], []
    for i, v in enumerate(views):
        if v.get("depth") is None:
            raise PreconditionError(f"view {i} has no rendered depth")
        cam = v["camera"]
        far = elevate_camera(cam, offset)
        r = render_image(grid, far, n_samples, box=box, heads=())
        far_depth = surface_depth(r["depth"], r["opacity"])
        far_sem = segmenter(far, far_view_key(i))
        sem, ch_far = pull_far_labels(v["semantic"], v["depth"], cam, far, far_sem, far_depth,
                                      eps_d, both_directions)
        p = np.where(ch_far, FAR_VIEW, ORIGINAL).astype(np.uint8)
        sem, ch_agn = refine_small_classes(sem, None if agnostic is None else agnostic[i],
                                           iou_threshold)
        p[ch_agn] = AGNOSTIC
        fused.append(sem)
        prov.append(p)
        far_cams.append(far)
        far_sems.append(far_sem)
    return FusedSemanticSet(fused, prov, far_cams, far_sems)


def far_view_key(i: int) -> int:
    # far viewpoints get their own noise stream, disjoint from original views
    return 1_000_000 + int(i)


# ---------------------------------------------------------------- conflict entropy

@dataclass(eq=False)
class ConflictReport:
    histogram: np.ndarray     # (n_points, NUM_CLASSES) vote counts
    mean_entropy: float
    n_points: int             # points with >= 2 votes
    n_votes: int

    @property
    def class_votes(self) -> np.ndarray:
        return self.histogram.sum(axis=0)

    def to_dict(self) -> dict:
        votes = self.histogram.sum(axis=1)
        return {
            "mean_entropy": self.mean_entropy,
            "n_points": self.n_points,
            "n_votes": self.n_votes,
            "histogram_summary": {
                "class_votes": [int(x) for x in self.class_votes],
                "votes_per_point_mean": float(votes.mean()) if len(votes) else 0.0,
                "points_with_conflict": int(np.count_nonzero((self.histogram > 0).sum(1) > 1)),
            },
        }


def vote_histogram(views, points: np.ndarray, eps_d: float) -> np.ndarray:
    """Per-point class votes from every view that sees the point unoccluded.

    ``views`` holds dicts with ``camera``, ``semantic`` and ``gt_depth``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    hist = np.zeros((len(pts), NUM_CLASSES), dtype=np.int64)
    for v in views:
        cam = v["camera"]
        uv, z = project_points(cam, pts)
        with np.errstate(invalid="ignore"):
            col = np.floor(uv[:, 0])
            row = np.floor(uv[:, 1])
        ok = (z > 0) & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
        idx = np.flatnonzero(ok)
        r, c = row[idx].astype(np.int64), col[idx].astype(np.int64)
        vis = np.abs(z[idx] - v["gt_depth"][r, c]) < eps_d
        idx, r, c = idx[vis], r[vis], c[vis]
        lab = v["semantic"][r, c].astype(np.int64)
        lab = np.where(lab == SKY, ClassId.GROUND, lab)
        np.add.at(hist, (idx, lab), 1)
    return hist


def histogram_entropy(hist: np.ndarray) -> np.ndarray:
    n = hist.sum(axis=1, keepdims=True)
    p = hist / np.maximum(n, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
    return h


def conflict_entropy(views, gt_points, eps_d: float) -> ConflictReport:
    """Mean label entropy over GT surface points voted on by >= 2 views."""
    if len(views) < 2:
        raise InputError("conflict entropy needs at least two views")
    pts = gt_points["points"] if isinstance(gt_points, dict) else gt_points
    hist = vote_histogram(views, pts, eps_d)
    votes = hist.sum(axis=1)
    keep = votes >= 2
    if not keep.any():
        raise ReportError("no point received two or more votes")
    ent = histogram_entropy(hist[keep])
    return ConflictReport(hist, float(ent.mean()), int(keep.sum()), int(votes.sum()))
