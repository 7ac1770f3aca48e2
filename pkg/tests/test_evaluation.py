import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ulft.errors import ReportError
from ulft.evaluation import (aggregate_seeds, build_report, canonical_json, fingerprint, miou,
                             pq_scene, psnr, segment_stats, void_mask)
from ulft.scene import SKY, ClassId

B, R, C, T, G = (int(ClassId.BUILDING), int(ClassId.ROAD), int(ClassId.CAR), int(ClassId.TREE),
                 int(ClassId.GROUND))


def test_psnr_values():
    a = np.zeros((2, 2, 3))
    assert psnr(a, a) == math.inf
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-9


def test_miou_hand_counted():
    gt = np.array([[B, B, R, R],
                   [C, C, T, G]])
    pred = np.array([[B, R, R, R],
                     [C, T, T, B]])
    # G pixel is void, so its B prediction is ignored
    iou, m = miou([pred], [gt])
    assert iou[B] == 1 / 2      # tp 1, fn 1
    assert iou[R] == 2 / 3      # tp 2, fp 1
    assert iou[C] == 1 / 2      # tp 1, fn 1
    assert iou[T] == 1 / 2      # tp 1, fp 1
    assert m == (1 / 2 + 2 / 3 + 1 / 2 + 1 / 2) / 4


def test_miou_skips_absent_classes():
    gt = np.array([[B, SKY]])
    iou, m = miou([gt], [gt])
    assert iou[B] == 1.0 and math.isnan(iou[C]) and m == 1.0


def test_pq_fixture_point_six_is_thirty():
    gt = np.zeros((1, 10), dtype=np.int64)
    pred = np.zeros((1, 10), dtype=np.int64)
    gt[0, :5] = 1
    pred[0, 2:7] = 1      # inter 3, union 7: below the match threshold
    r = pq_scene([pred], [gt])
    assert r.tp == 0 and r.pq == 0.0
    pred[:] = 0
    pred[0, 0:3] = 1      # inside a ground truth of 5 pixels: IoU 0.6
    r = pq_scene([pred], [gt])
    assert (r.tp, r.fp, r.fn) == (1, 0, 0) and r.pq == 60.0
    # one unmatched prediction and one unmatched ground-truth instance
    gt[0, 8] = 2
    pred[0, 9] = 3
    r = pq_scene([pred], [gt])
    assert (r.tp, r.fp, r.fn) == (1, 1, 1)
    assert r.mean_iou == 0.6
    assert r.pq == 30.0


def _exhaustive_pq(pred_maps, gt_maps):
    """Best total IoU over every one-to-one pairing, keeping IoU > 0.5 pairs only."""
    pa, ga, inter = segment_stats(pred_maps, gt_maps)
    P, Gs = sorted(pa), sorted(ga)
    iou = {(p, g): inter.get((p, g), 0) / (pa[p] + ga[g] - inter.get((p, g), 0))
           for p in P for g in Gs}
    best = (0, 0.0)
    small, large = (P, Gs) if len(P) <= len(Gs) else (Gs, P)
    for perm in itertools.permutations(large, len(small)):
        pairs = [(s, l) if small is P else (l, s) for s, l in zip(small, perm)]
        ok = [iou[p] for p in pairs if iou[p] > 0.5]
        cand = (len(ok), sum(ok))
        if cand[0] > best[0] or (cand[0] == best[0] and cand[1] > best[1]):
            best = cand
    tp, s = best
    den = tp + 0.5 * (len(P) - tp) + 0.5 * (len(Gs) - tp)
    return 100 * s / den if den else math.nan


@given(st.integers(0, 10_000))
def test_pq_matcher_equals_exhaustive(seed):
    rng = np.random.default_rng(seed)
    shape = (6, 7)
    n_views = int(rng.integers(1, 3))
    preds = [rng.integers(0, int(rng.integers(2, 5)), shape) for _ in range(n_views)]
    gts = [np.where(rng.random(shape) < 0.8, p, rng.integers(0, 4, shape)) for p in preds]
    r = pq_scene(preds, gts)
    ref = _exhaustive_pq(preds, gts)
    if math.isnan(ref):
        assert math.isnan(r.pq)
    else:
        assert abs(r.pq - ref) < 1e-9


def test_pq_hundred_fixtures():
    rng = np.random.default_rng(99)
    for _ in range(100):
        shape = (5, 5)
        p = rng.integers(0, 4, shape)
        g = np.where(rng.random(shape) < 0.7, p, rng.integers(0, 4, shape))
        r = pq_scene([p], [g])
        ref = _exhaustive_pq([p], [g])
        assert (math.isnan(r.pq) and math.isnan(ref)) or abs(r.pq - ref) < 1e-9


def test_pq_void_pixels_removed():
    gt = np.array([[1, 1, 0, 0]])
    pred = np.array([[1, 1, 1, 1]])
    void = np.array([[False, False, True, True]])
    assert pq_scene([pred], [gt], [void]).pq == 100.0
    assert pq_scene([pred], [gt]).tp == 0


def test_void_mask():
    s = np.array([G, SKY, B])
    assert void_mask(s).tolist() == [True, True, False]


def test_report_is_canonical_and_complete():
    cfg = {"a": 1, "b": [1, 2]}
    r = build_report(cfg, 3, ("psnr", "x"), psnr={"mean": math.inf}, x={"v": math.nan})
    text = r.to_json()
    assert text == build_report(cfg, 3, ("psnr", "x"), x={"v": math.nan},
                                psnr={"mean": math.inf}).to_json()
    d = json.loads(text)
    assert d["psnr"]["mean"] == "inf" and d["x"]["v"] == "nan"
    assert d["fingerprint"] == fingerprint(cfg, 3) != fingerprint(cfg, 4)
    with pytest.raises(ReportError, match="pq_scene"):
        build_report(cfg, 3, ("psnr", "pq_scene"), psnr={})
    assert canonical_json({"b": 1, "a": np.int64(2)}).index('"a"') < canonical_json(
        {"b": 1, "a": 2}).index('"b"')


def test_aggregate_seeds_median():
    reps = [build_report({}, s, ("m",), m={"v": float(s), "w": {"u": 1.0}}) for s in (1, 2, 9)]
    agg = aggregate_seeds(reps)
    assert agg["median"]["m.v"] == 2.0 and agg["median"]["m.w.u"] == 1.0
    assert [r["seed"] for r in agg["rows"]] == [1, 2, 9]
