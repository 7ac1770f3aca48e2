"""Instance field training from grouped 2D masks.

Two objectives are supported.  ``assignment`` renders surrogate logits and
matches each batch's 2D segments to surrogate slots with the Hungarian
method before a weighted cross-entropy.  ``contrastive`` renders a small
embedding and pulls it toward same-segment embeddings of a slowly updated
copy of the field, after which scene instances come from density
clustering.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import BatchingError, CapacityError, ClusteringError, InputError, PreconditionError
from .field.losses import LossTerms
from .field.render import softmax
from .grouping import segment_map, select_representative
from .scene import ClassId

log = logging.getLogger(__name__)

MODES = ("assignment", "contrastive")
K_SURROGATE = 24
EMBED_DIM = 3


# ---------------------------------------------------------------- linear assignment

def assignment_scores(segments: np.ndarray, probs: np.ndarray):
    """Mean rendered probability of every surrogate over each segment's rays.

    Returns ``(segment_ids, scores)`` with scores shaped (n_segments, K).
    """
    seg_ids, inv = np.unique(segments, return_inverse=True)
    sums = np.zeros((len(seg_ids), probs.shape[1]))
    np.add.at(sums, inv, probs)
    counts = np.bincount(inv, minlength=len(seg_ids))
    return seg_ids, sums / counts[:, None]


def solve_assignment(scores: np.ndarray) -> np.ndarray:
    """Injective max-score mapping rows -> columns."""
    if scores.shape[0] > scores.shape[1]:
        raise CapacityError(f"{scores.shape[0]} segments exceed {scores.shape[1]} surrogates")
    rows, cols = linear_sum_assignment(scores, maximize=True)
    out = np.empty(scores.shape[0], dtype=np.int64)
    out[rows] = cols
    return out


def assignment_loss(segments: np.ndarray, logits: np.ndarray, weights=None):
    """Weighted cross-entropy against Hungarian-assigned surrogates.

    ``segments`` holds one 2D segment id per ray and ``logits`` the rendered
    surrogate logits.  Returns ``(loss, grad_logits, mapping)`` with
    ``mapping`` a dict segment id -> surrogate slot.  The mapping is held
    fixed when differentiating.
    """
    segments = np.asarray(segments)
    B = len(segments)
    if B == 0:
        raise InputError("empty ray batch")
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    p = softmax(logits)
    seg_ids, scores = assignment_scores(segments, p)
    slots = solve_assignment(scores)
    mapping = {int(s): int(k) for s, k in zip(seg_ids, slots)}
    target = slots[np.searchsorted(seg_ids, segments)]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-(w * logp[np.arange(B), target]).sum() / B)
    grad = p.copy()
    grad[np.arange(B), target] -= 1.0
    grad *= (w / B)[:, None]
    return loss, grad, mapping


# ---------------------------------------------------------------- contrastive

def similarity(x, y, gamma: float = 1.0):
    """exp(-gamma * ||x - y||^2), broadcasting over leading axes."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return np.exp(-gamma * np.sum(d * d, axis=-1))


def contrastive_losses(fast: np.ndarray, seg1: np.ndarray, slow: np.ndarray,
                       seg2: np.ndarray, gamma: float = 1.0, outer_exp: bool = True):
    """Slow-fast contrastive and concentration losses for rays R1 against R2.

    ``fast`` (n1, E) are rendered embeddings of R1, ``slow`` (n2, E) the
    slow-field embeddings of R2 (constants).  Each R1 ray is scored by the
    share of its affinity mass that falls on same-segment R2 rays; the
    affinity of a pair is exp(sim) when ``outer_exp`` is set, else sim.
    Returns ``(L_sf, L_conc, grad_sf, grad_conc)`` with gradients w.r.t.
    ``fast``.
    """
    fast = np.asarray(fast, dtype=np.float64)
    slow = np.asarray(slow, dtype=np.float64)
    seg1 = np.asarray(seg1)
    seg2 = np.asarray(seg2)
    n1 = len(fast)
    if n1 == 0 or len(slow) == 0:
        raise BatchingError("both ray subsets must be non-empty")
    same = seg1[:, None] == seg2[None, :]
    n_same = same.sum(axis=1)
    if np.any(n_same == 0):
        raise BatchingError("every R1 segment needs a same-segment ray in R2")
    diff = fast[:, None, :] - slow[None, :, :]           # (n1, n2, E)
    s = np.exp(-gamma * np.sum(diff * diff, axis=-1))    # sim
    a = np.exp(s) if outer_exp else s                    # pair affinity
    # d a / d x = da/ds * ds/dx,   ds/dx = -2 gamma s (x - y)
    dads = a if outer_exp else np.ones_like(a)
    coef = dads * s * (-2.0 * gamma)                     # (n1, n2)
    A = np.where(same, a, 0.0).sum(axis=1)
    Z = a.sum(axis=1)
    l_sf = float(-np.mean(np.log(A / Z)))
    dA = np.einsum("ij,ijk->ik", np.where(same, coef, 0.0), diff)
    dZ = np.einsum("ij,ijk->ik", coef, diff)
    g_sf = -(dA / A[:, None] - dZ / Z[:, None]) / n1
    mean_slow = (same.astype(np.float64) @ slow) / n_same[:, None]
    r = fast - mean_slow
    l_conc = float(np.mean(np.sum(r * r, axis=1)))
    g_conc = 2.0 * r / n1
    return l_sf, l_conc, g_sf, g_conc


def update_slow_field(fast: np.ndarray, slow: np.ndarray, momentum: float = 0.99) -> np.ndarray:
    """In-place exponential moving average: slow <- m * slow + (1 - m) * fast."""
    if fast.shape != slow.shape:
        raise InputError("fast and slow tables differ in shape")
    if momentum == 1.0:
        return slow
    slow *= momentum
    slow += (1.0 - momentum) * fast
    return slow


# ---------------------------------------------------------------- clustering

@dataclass(eq=False)
class ClusterModel:
    centroids: np.ndarray     # (n_clusters, E), ordered by descending cluster size
    eps: float
    min_cluster_size: int
    sizes: tuple = ()

    def assign(self, emb: np.ndarray) -> np.ndarray:
        """Nearest-centroid cluster index (0-based) for every embedding."""
        emb = np.asarray(emb, dtype=np.float64).reshape(-1, self.centroids.shape[1])
        d = ((emb[:, None, :] - self.centroids[None]) ** 2).sum(-1)
        return np.argmin(d, axis=1)

    def to_dict(self) -> dict:
        return {"centroids": self.centroids.tolist(), "eps": self.eps,
                "min_cluster_size": self.min_cluster_size, "sizes": list(self.sizes)}

    @classmethod
    def from_dict(cls, d) -> "ClusterModel":
        return cls(np.asarray(d["centroids"], dtype=np.float64), float(d["eps"]),
                   int(d["min_cluster_size"]), tuple(d.get("sizes", ())))


def default_eps(emb: np.ndarray, percentile: float = 5.0, max_points: int = 2000,
                seed: int = 0) -> float:
    emb = np.asarray(emb, dtype=np.float64)
    if len(emb) > max_points:
        emb = emb[np.random.default_rng(seed).choice(len(emb), max_points, replace=False)]
    d = pdist(emb)
    eps = float(np.percentile(d, percentile)) if len(d) else 0.0
    return max(eps, 1e-9)


def density_labels(emb: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Flat density clustering; -1 marks noise.

    Points with at least ``min_pts`` neighbours within ``eps`` (self
    included) are core points.  Cores closer than ``eps`` share a cluster
    and every other point within ``eps`` of a core joins the nearest one.
    Cluster labels are numbered by their smallest member index.
    """
    n = len(emb)
    tree = cKDTree(emb)
    counts = np.array([len(x) for x in tree.query_ball_point(emb, eps)])
    core = counts >= min_pts
    labels = np.full(n, -1, dtype=np.int64)
    if not core.any():
        return labels
    ci = np.flatnonzero(core)
    sub = cKDTree(emb[ci])
    pairs = sub.query_pairs(eps, output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(ci), len(ci)))
    _, comp = connected_components(g, directed=False)
    # renumber components by first member
    _, first = np.unique(comp, return_index=True)
    order = np.argsort(np.argsort(first))
    labels[ci] = order[comp]
    border = np.flatnonzero(~core)
    if len(border):
        d, j = sub.query(emb[border])
        near = d <= eps
        labels[border[near]] = labels[ci[j[near]]]
    return labels


def cluster_embeddings(emb: np.ndarray, eps: float | None = None, min_pts: int = 10,
                       min_cluster_size: int = 50, eps_percentile: float = 1.0,
                       seed: int = 0) -> ClusterModel:
    """Density clustering; clusters smaller than ``min_cluster_size`` are discarded.

    Retained clusters are ordered by descending size (ties by first member).
    """
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or len(emb) == 0:
        raise ClusteringError("no embeddings to cluster")
    if eps is None:
        eps = default_eps(emb, eps_percentile, seed=seed)
    labels = density_labels(emb, eps, min_pts)
    ids, counts = np.unique(labels[labels >= 0], return_counts=True)
    keep = [(int(c), int(i)) for i, c in zip(ids, counts) if c >= min_cluster_size]
    if not keep:
        raise ClusteringError("no cluster reached the minimum size; field may be under-trained")
    keep.sort(key=lambda t: (-t[0], t[1]))
    cents = np.stack([emb[labels == i].mean(axis=0) for _, i in keep])
    return ClusterModel(cents, float(eps), int(min_cluster_size), tuple(c for c, _ in keep))


# ---------------------------------------------------------------- inference

def render_instance_map(instance_out: np.ndarray, semantic: np.ndarray, mode: str,
                        cluster_model: ClusterModel | None = None) -> np.ndarray:
    """Scene instance ids per pixel (0 off buildings).

    ``instance_out`` is (H, W, C) rendered instance output, ``semantic`` the
    predicted class map.  Ids are surrogate index + 1 or cluster index + 1.
    """
    H, W = semantic.shape
    flat = instance_out.reshape(H * W, -1)
    if mode == "assignment":
        ids = np.argmax(flat, axis=1) + 1
    elif mode == "contrastive":
        if cluster_model is None:
            raise PreconditionError("contrastive mode needs a cluster model")
        ids = cluster_model.assign(flat) + 1
    else:
        raise InputError(f"unknown instance mode {mode!r}")
    ids = np.where(semantic.reshape(-1) == ClassId.BUILDING, ids, 0)
    return ids.reshape(H, W).astype(np.int64)


# ---------------------------------------------------------------- training hook

@dataclass(frozen=True)
class InstanceConfig:
    mode: str = "assignment"
    batch_rays: int = 1024
    gamma: float = 1.0
    momentum: float = 0.99
    outer_exp: bool = True
    max_segments: int = K_SURROGATE
    supervision: str = "group"
    init_std: float | None = None
    seed: int = 0

    def std(self) -> float:
        if self.init_std is not None:
            return self.init_std
        return 0.3 if self.mode == "assignment" else 0.1


class InstanceHook:
    """Per-iteration batch builder and loss for :func:`ulft.field.train.train`.

    ``views`` holds, per training view, its mask set, group table and
    boolean building mask; ``offsets`` maps each view to the first row of
    its pixels in the training ray table.  Every iteration draws one view,
    one representative mask per group, and rays from those masks on
    building pixels only.
    """

    def __init__(self, views, offsets, cfg: InstanceConfig, slow_table=None):
        if cfg.mode not in MODES:
            raise InputError(f"unknown instance mode {cfg.mode!r}")
        self.views = views
        self.offsets = offsets
        self.cfg = cfg
        self.slow = slow_table
        self.usable = [i for i, v in enumerate(views) if len(v["masks"]) > 0]
        if not self.usable:
            raise PreconditionError("no view has instance masks")

    def _segments(self, it, rng):
        v = self.usable[int(rng.integers(len(self.usable)))]
        view = self.views[v]
        table = view["groups"]
        reps = None
        if self.cfg.supervision == "representative":
            reps = [select_representative(g, it, self.cfg.seed, v, gi)
                    for gi, g in enumerate(table.groups)]
        seg = segment_map(view["masks"], table, reps).reshape(-1)
        seg = np.where(view["building"].reshape(-1), seg, 0)
        present = np.unique(seg[seg > 0])
        if len(present) > self.cfg.max_segments:
            present = np.sort(rng.choice(present, self.cfg.max_segments, replace=False))
            seg = np.where(np.isin(seg, present), seg, 0)
        return v, seg

    def __call__(self, grid, op, data, it, rng, weights):
        for _ in range(16):
            v, seg = self._segments(it, rng)
            pix = np.flatnonzero(seg)
            if len(pix):
                break
        else:
            raise BatchingError("could not draw a non-empty instance batch")
        take = np.sort(rng.choice(len(pix), min(self.cfg.batch_rays, len(pix)), replace=False))
        pix = pix[take]
        rows = self.offsets[v] + pix
        lab = seg[pix]
        terms = LossTerms()
        if self.cfg.mode == "assignment":
            logits = op.apply(grid.params["instance"], rows)
            loss, g, _ = assignment_loss(lab, logits)
            terms.values["instance"] = loss
            terms.values["total"] = weights.instance * loss
            terms.grads["instance"] = weights.instance * g
            return terms, rows
        # contrastive: split each segment's rays between R1 and R2
        r1, r2 = split_halves(lab, rng)
        if len(r1) == 0:
            raise BatchingError("instance batch has no segment with two rays")
        fast = op.apply(grid.params["instance"], rows[r1])
        slow = op.apply(self.slow, rows[r2])
        l_sf, l_conc, g_sf, g_conc = contrastive_losses(
            fast, lab[r1], slow, lab[r2], self.cfg.gamma, self.cfg.outer_exp)
        loss = l_sf + l_conc
        terms.values["instance"] = loss
        terms.values["total"] = weights.instance * loss
        terms.grads["instance"] = weights.instance * (g_sf + g_conc)
        return terms, rows[r1]

    def after_step(self, grid):
        if self.cfg.mode == "contrastive":
            update_slow_field(grid.params["instance"], self.slow, self.cfg.momentum)


def split_halves(lab: np.ndarray, rng) -> tuple:
    """Disjoint index sets with every kept segment present in both halves."""
    r1, r2 = [], []
    for s in np.unique(lab):
        idx = np.flatnonzero(lab == s)
        if len(idx) < 2:
            continue
        idx = rng.permutation(idx)
        h = len(idx) // 2
        r1.append(idx[:h])
        r2.append(idx[h:])
    if not r1:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(r1)), np.sort(np.concatenate(r2))
