"""Parametric stand-ins for 2D segmenters.

``corrupt_semantic`` imitates a closed-set semantic segmenter whose errors
depend on how large objects appear: big rooftops get confused with road,
boundaries wobble, and small things are occasionally swallowed by their
surroundings.  ``oversegment_instances`` imitates a class-agnostic mask
generator that splits buildings into view-dependent blocks and adds small
nested masks.  All randomness is keyed by (seed, view, object) so any view
can be regenerated on its own.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.cluster.vq import kmeans2

from .errors import InputError
from .scene import SKY, ClassId, GtBuffers

_TAG_FLIP, _TAG_JITTER, _TAG_CONF, _TAG_SPLIT, _TAG_AGN = 1, 2, 3, 4, 5

_CROSS = ndimage.generate_binary_structure(2, 1)


def _rng(seed, *keys) -> np.random.Generator:
    return np.random.default_rng([int(seed)] + [int(k) for k in keys])


# ---------------------------------------------------------------- semantic noise

@dataclass(frozen=True)
class SemanticNoiseModel:
    rooftop_flip_base: float = 0.6
    area_threshold_alpha: float = 0.15
    boundary_jitter_px: int = 2
    # probability that a whole connected component of the first class is
    # labelled as the second
    small_class_confusion: tuple = ((int(ClassId.CAR), int(ClassId.ROAD), 0.3),
                                    (int(ClassId.TREE), int(ClassId.GROUND), 0.3))
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rooftop_flip_base <= 1.0:
            raise InputError("rooftop_flip_base must lie in [0, 1]")
        if not 0.0 < self.area_threshold_alpha <= 1.0:
            raise InputError("area_threshold_alpha must lie in (0, 1]")
        if self.boundary_jitter_px < 0:
            raise InputError("boundary_jitter_px must be >= 0")
        for src, dst, p in self.small_class_confusion:
            if not 0.0 <= p <= 1.0:
                raise InputError(f"confusion probability {p} outside [0, 1]")


def rooftop_flip_probability(area_fraction: float, model: SemanticNoiseModel) -> float:
    """Probability that a building covering ``area_fraction`` of the frame loses its roof."""
    a = float(area_fraction) / model.area_threshold_alpha
    return model.rooftop_flip_base * min(max(a, 0.0), 1.0)


def rooftop_flip_decision(model: SemanticNoiseModel, view_key, instance_id: int,
                          area_fraction: float) -> bool:
    u = _rng(model.seed, _TAG_FLIP, view_key, instance_id).random()
    return bool(u < rooftop_flip_probability(area_fraction, model))


def _jitter_boundaries(sem: np.ndarray, sky: np.ndarray, radius: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Grow each class by a random 0..radius pixels, in random class order.

    Growing one class erodes its neighbours, so boundaries move both ways.
    Sky pixels are never written.
    """
    out = sem.copy()
    if radius <= 0:
        return out
    classes = [c for c in np.unique(sem[~sky])]
    order = rng.permutation(len(classes))
    grow = rng.integers(0, radius + 1, size=len(classes))
    for i in order:
        r = int(grow[i])
        if r == 0:
            continue
        m = out == classes[i]
        big = ndimage.binary_dilation(m, _CROSS, iterations=r)
        out[big & ~sky] = classes[i]
    return out


def corrupt_semantic(gt: GtBuffers, camera, model: SemanticNoiseModel, view_key=0
                     ) -> np.ndarray:
    """Noisy semantic map for one view (sky keeps the SKY code)."""
    sem = gt.semantic.astype(np.uint8).copy()
    sky = gt.semantic == SKY
    H, W = sem.shape
    n_px = float(H * W) if camera is None else float(camera.width * camera.height)
    roof = gt.normal[..., 2] > 0.5
    for iid in np.unique(gt.instance):
        if iid <= 0:
            continue
        m = gt.instance == iid
        if rooftop_flip_decision(model, view_key, int(iid), m.sum() / n_px):
            sem[m & roof] = ClassId.ROAD
    sem = _jitter_boundaries(sem, sky, model.boundary_jitter_px,
                             _rng(model.seed, _TAG_JITTER, view_key))
    rng = _rng(model.seed, _TAG_CONF, view_key)
    for src, dst, p in model.small_class_confusion:
        lab, n = ndimage.label(sem == src, _CROSS)
        if n == 0:
            continue
        flip = rng.random(n) < p
        sem[flip[lab - 1] & (lab > 0)] = dst
    return sem


# ---------------------------------------------------------------- mask sets

@dataclass(eq=False)
class MaskSet:
    """View-local binary masks stored as sorted flat pixel indices.

    ``source`` records the GT instance a mask was cut from (0 if none),
    ``kind`` is ``block``, ``window`` or ``agnostic``, ``parent`` the id of
    the mask a nested one was cut from.
    """

    shape: tuple
    pixels: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)
    kind: dict = field(default_factory=dict)
    parent: dict = field(default_factory=dict)
    label: dict = field(default_factory=dict)

    @property
    def ids(self) -> list:
        return sorted(self.pixels)

    def __len__(self):
        return len(self.pixels)

    def area(self, mid: int) -> int:
        return len(self.pixels[mid])

    def mask(self, mid: int) -> np.ndarray:
        m = np.zeros(self.shape[0] * self.shape[1], dtype=bool)
        m[self.pixels[mid]] = True
        return m.reshape(self.shape)

    def add(self, mid: int, pix, source=0, kind="block", parent=None, label=None):
        pix = np.unique(np.asarray(pix, dtype=np.int64))
        if mid <= 0 or mid in self.pixels:
            raise InputError(f"mask id {mid} is not positive or already used")
        if len(pix) == 0:
            raise InputError("masks must be non-empty")
        self.pixels[mid] = pix
        self.source[mid] = int(source)
        self.kind[mid] = kind
        self.parent[mid] = parent
        if label is not None:
            self.label[mid] = int(label)

    def subset(self, ids) -> "MaskSet":
        out = MaskSet(self.shape)
        for i in ids:
            out.pixels[i] = self.pixels[i]
            out.source[i] = self.source[i]
            out.kind[i] = self.kind[i]
            out.parent[i] = self.parent[i]
            if i in self.label:
                out.label[i] = self.label[i]
        return out

    def bbox(self, mid: int) -> tuple:
        r, c = np.divmod(self.pixels[mid], self.shape[1])
        return int(c.min()), int(r.min()), int(c.max()), int(r.max())

    def id_layers(self) -> list:
        """Non-overlapping id maps: top-level masks first, nested masks after."""
        top = np.zeros(self.shape[0] * self.shape[1], dtype=np.int64)
        nested = np.zeros_like(top)
        for mid in self.ids:
            (nested if self.parent[mid] is not None else top)[self.pixels[mid]] = mid
        layers = [top.reshape(self.shape)]
        if nested.any():
            layers.append(nested.reshape(self.shape))
        return layers

    def index(self) -> list:
        return [{"mask_id": int(m), "area": self.area(m), "bbox": list(self.bbox(m)),
                 "parent": self.parent[m], "kind": self.kind[m], "source": self.source[m]}
                for m in self.ids]


# ---------------------------------------------------------------- over-segmentation

@dataclass(frozen=True)
class OversegModel:
    split_count_range: tuple = (1, 5)
    nest_rate: float = 2.0
    drop_rate: float = 0.05
    min_block_px: int = 12
    window_px: tuple = (2, 4)
    window_max_height_m: float = 3.0
    seed: int = 0

    def __post_init__(self):
        k0, k1 = self.split_count_range
        if k0 < 1 or k1 < k0:
            raise InputError(f"bad split_count_range {self.split_count_range}")
        if self.nest_rate < 0 or not 0 <= self.drop_rate <= 1:
            raise InputError("rates must be non-negative probabilities")


def _split_region(coords: np.ndarray, k: int, min_px: int, rng) -> np.ndarray:
    """k-means labels of pixel coordinates with random initial centers."""
    n = len(coords)
    k = max(1, min(k, n // max(min_px, 1)))
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    init = coords[rng.choice(n, size=k, replace=False)].astype(np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cent, lab = kmeans2(coords.astype(np.float64), init, iter=10, minit="matrix",
                            missing="warn")
    # fold blocks that are too small into the nearest surviving center
    while True:
        sizes = np.bincount(lab, minlength=len(cent))
        alive = np.flatnonzero(sizes >= min_px)
        small = np.flatnonzero((sizes > 0) & (sizes < min_px))
        if len(small) == 0 or len(alive) == 0:
            break
        j = small[np.argmin(sizes[small])]
        m = lab == j
        d = ((coords[m, None, :] - cent[None, alive, :]) ** 2).sum(-1)
        lab[m] = alive[np.argmin(d, axis=1)]
        sizes = np.bincount(lab, minlength=len(cent))
        cent[j] = np.inf
    _, lab = np.unique(lab, return_inverse=True)
    return lab


def _window(block: np.ndarray, gt: GtBuffers, model: OversegModel, mpu: float, rng):
    """A small rectangle on one face inside ``block`` with small 3D height extent."""
    H, W = gt.shape
    rows, cols = np.divmod(block, W)
    normals = gt.normal.reshape(-1, 3)
    z = gt.points.reshape(-1, 3)[:, 2]
    inside = np.zeros(H * W, dtype=bool)
    inside[block] = True
    for _ in range(8):
        j = rng.integers(len(block))
        h, w = rng.integers(model.window_px[0], model.window_px[1] + 1, size=2)
        r0, c0 = rows[j], cols[j]
        rr, cc = np.meshgrid(np.arange(r0, min(r0 + h, H)), np.arange(c0, min(c0 + w, W)),
                             indexing="ij")
        pix = (rr * W + cc).ravel()
        same_face = np.all(np.abs(normals[pix] - normals[block[j]]) < 1e-6, axis=1)
        pix = pix[inside[pix] & same_face]
        if len(pix) < 2 or len(pix) == len(block):
            continue
        if (z[pix].max() - z[pix].min()) * mpu < model.window_max_height_m:
            return pix
    return None


def oversegment_instances(gt: GtBuffers, model: OversegModel, view_key=0,
                          meters_per_unit: float = 400.0) -> MaskSet:
    """Over-segmented, view-inconsistent building masks for one view."""
    H, W = gt.shape
    rng = _rng(model.seed, _TAG_SPLIT, view_key)
    inst = gt.instance.ravel()
    blocks = []   # (source, pixels)
    windows = []  # (source, parent block index, pixels)
    for iid in np.unique(inst):
        if iid <= 0:
            continue
        pix = np.flatnonzero(inst == iid)
        k = int(rng.integers(model.split_count_range[0], model.split_count_range[1] + 1))
        coords = np.column_stack(np.divmod(pix, W))
        lab = _split_region(coords, k, model.min_block_px, rng)
        for b in range(lab.max() + 1):
            bp = pix[lab == b]
            if rng.random() < model.drop_rate:
                continue
            blocks.append((int(iid), bp))
            for _ in range(rng.poisson(model.nest_rate)):
                wp = _window(bp, gt, model, meters_per_unit, rng)
                if wp is not None:
                    windows.append((int(iid), len(blocks) - 1, wp))
    ids = rng.permutation(len(blocks) + len(windows)) + 1
    ms = MaskSet((H, W))
    for (src, bp), mid in zip(blocks, ids[:len(blocks)]):
        ms.add(int(mid), bp, src, "block")
    for (src, parent, wp), mid in zip(windows, ids[len(blocks):]):
        ms.add(int(mid), wp, src, "window", parent=int(ids[parent]))
    return ms


def agnostic_masks_for_small_classes(gt: GtBuffers, seed, view_key=0,
                                     flip_rate: float = 0.03) -> MaskSet:
    """Connected components of GT cars and trees with light boundary noise.

    Each pixel within one pixel of a component's boundary flips membership
    with probability ``flip_rate``.
    """
    H, W = gt.shape
    rng = _rng(seed, _TAG_AGN, view_key)
    ms = MaskSet((H, W))
    mid = 1
    free = gt.semantic != SKY
    for cls in (ClassId.CAR, ClassId.TREE):
        lab, n = ndimage.label(gt.semantic == cls, _CROSS)
        for j in range(1, n + 1):
            m = lab == j
            ring = ndimage.binary_dilation(m, _CROSS) & ~ndimage.binary_erosion(m, _CROSS)
            flip = ring & free & (rng.random((H, W)) < flip_rate)
            jm = m ^ flip
            if not jm.any():
                jm = m
            ms.add(mid, np.flatnonzero(jm), 0, "agnostic", label=int(cls))
            mid += 1
    return ms


class OracleSegmenter:
    """Semantic segmenter stand-in: ground truth rendered at any camera, then corrupted."""

    def __init__(self, scene, model: SemanticNoiseModel = SemanticNoiseModel()):
        self.scene = scene
        self.model = model

    def __call__(self, camera, view_key=0) -> np.ndarray:
        from .scene import render_gt
        return corrupt_semantic(render_gt(self.scene, camera), camera, self.model, view_key)
