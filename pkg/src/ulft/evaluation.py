"""Image and scene metrics and the evaluation report."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ReportError
from .scene import SKY, ClassId

EVAL_CLASSES = (ClassId.BUILDING, ClassId.ROAD, ClassId.CAR, ClassId.TREE)
REPORT_VERSION = 1


def psnr(rendered: np.ndarray, gt: np.ndarray) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; +inf for identical inputs."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def void_mask(gt_semantic: np.ndarray) -> np.ndarray:
    """Pixels without annotation: ground and sky."""
    return (gt_semantic == ClassId.GROUND) | (gt_semantic == SKY)


def miou(pred_maps, gt_maps, classes=EVAL_CLASSES):
    """Per-class IoU over all views and their mean.

    Returns ``(iou, mean)`` where ``iou`` maps class id to IoU (NaN when the
    class is absent from both prediction and ground truth; such classes do
    not enter the mean).
    """
    if len(pred_maps) != len(gt_maps):
        raise InputError("prediction and ground-truth lists differ in length")
    tp = np.zeros(len(classes), dtype=np.int64)
    fp = np.zeros_like(tp)
    fn = np.zeros_like(tp)
    for p, g in zip(pred_maps, gt_maps):
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise InputError(f"shape mismatch {p.shape} vs {g.shape}")
        keep = ~void_mask(g)
        p, g = p[keep], g[keep]
        for k, c in enumerate(classes):
            pc, gc = p == c, g == c
            tp[k] += np.count_nonzero(pc & gc)
            fp[k] += np.count_nonzero(pc & ~gc)
            fn[k] += np.count_nonzero(~pc & gc)
    den = tp + fp + fn
    iou = {int(c): (float(tp[k] / den[k]) if den[k] else math.nan) for k, c in enumerate(classes)}
    vals = [v for v in iou.values() if not math.isnan(v)]
    return iou, (float(np.mean(vals)) if vals else math.nan)


@dataclass
class PQResult:
    pq: float
    tp: int
    fp: int
    fn: int
    mean_iou: float
    matches: list = field(default_factory=list)     # (pred id, gt id, iou)

    def to_dict(self) -> dict:
        return {"PQ": self.pq, "TP": self.tp, "FP": self.fp, "FN": self.fn,
                "mean_matched_iou": self.mean_iou}


def segment_stats(pred_maps, gt_maps, void_maps=None):
    """Scene-aggregated areas and intersections of instance ids (0 = none).

    Returns ``(pred_area, gt_area, inter)`` dicts; ``inter`` is keyed by
    (pred id, gt id).  Void pixels are dropped from both sides.
    """
    if len(pred_maps) != len(gt_maps):
        raise InputError("prediction and ground-truth lists differ in length")
    ps, gs = [], []
    for i, (p, g) in enumerate(zip(pred_maps, gt_maps)):
        p = np.asarray(p, dtype=np.int64)
        g = np.asarray(g, dtype=np.int64)
        if p.shape != g.shape:
            raise InputError(f"shape mismatch {p.shape} vs {g.shape}")
        keep = np.ones(p.shape, dtype=bool) if void_maps is None else ~np.asarray(void_maps[i])
        ps.append(p[keep])
        gs.append(g[keep])
    p = np.concatenate(ps) if ps else np.zeros(0, dtype=np.int64)
    g = np.concatenate(gs) if gs else np.zeros(0, dtype=np.int64)
    pid, pc = np.unique(p[p > 0], return_counts=True)
    gid, gc = np.unique(g[g > 0], return_counts=True)
    both = (p > 0) & (g > 0)
    pairs, counts = np.unique(np.column_stack([p[both], g[both]]), axis=0, return_counts=True)
    inter = {(int(a), int(b)): int(n) for (a, b), n in zip(pairs, counts)}
    return dict(zip(pid.tolist(), pc.tolist())), dict(zip(gid.tolist(), gc.tolist())), inter


def pq_scene(pred_maps, gt_maps, void_maps=None) -> PQResult:
    """Panoptic quality of scene-consistent instance ids, aggregated over views.

    A predicted and a ground-truth instance match when the IoU of their
    pixel sets, pooled over all views, exceeds 0.5.  Returned PQ is a
    percentage.
    """
    pa, ga, inter = segment_stats(pred_maps, gt_maps, void_maps)
    matches = []
    for (a, b), n in sorted(inter.items()):
        iou = n / (pa[a] + ga[b] - n)
        if iou > 0.5:
            matches.append((a, b, iou))
    tp = len(matches)
    fp = len(pa) - tp
    fn = len(ga) - tp
    den = tp + 0.5 * fp + 0.5 * fn
    s = sum(m[2] for m in matches)
    pq = 100.0 * s / den if den else math.nan
    return PQResult(pq, tp, fp, fn, s / tp if tp else math.nan, matches)


# ---------------------------------------------------------------- report

def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def fingerprint(config: dict, seed: int) -> str:
    blob = canonical_json({"config": config, "seed": int(seed)}).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EvalReport:
    seed: int
    fingerprint: str
    sections: dict

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "seed": self.seed, "fingerprint": self.fingerprint,
                **self.sections}

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def psnr_section(values) -> dict:
    values = [float(v) for v in values]
    finite = [v for v in values if math.isfinite(v)]
    return {"per_view": values, "mean": float(np.mean(finite)) if finite else math.inf}


def semantic_section(iou: dict, mean: float) -> dict:
    return {"iou": {ClassId(c).name.lower(): v for c, v in iou.items()}, "miou": mean}


def build_report(config: dict, seed: int, requested, **sections) -> EvalReport:
    """Assemble the requested sections; a missing one is an error naming it."""
    missing = [k for k in requested if sections.get(k) is None]
    if missing:
        raise ReportError(f"report is missing: {', '.join(missing)}")
    body = {k: sections[k] for k in requested}
    return EvalReport(int(seed), fingerprint(config, seed), body)


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            out[key] = v
    return out


def aggregate_seeds(reports) -> dict:
    """Per-seed flattened scalar rows plus the median of every shared key."""
    rows = [{"seed": r.seed, **flatten(r.sections)} for r in reports]
    keys = sorted(set.intersection(*(set(r) for r in rows)) - {"seed"}) if rows else []
    med = {k: float(np.median([r[k] for r in rows])) for k in keys}
    return {"rows": rows, "median": med}
