import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ulft.errors import BatchingError, CapacityError, ClusteringError, PreconditionError
from ulft.instance import (ClusterModel, InstanceConfig, assignment_loss, assignment_scores,
                           cluster_embeddings, contrastive_losses, density_labels, similarity,
                           solve_assignment, split_halves, update_slow_field,
                           render_instance_map)
from ulft.scene import ClassId


# ---------------------------------------------------------------- transcription oracles

def _sim(x, y, g):
    return math.exp(-g * sum((a - b) ** 2 for a, b in zip(x, y)))


def _oracle_contrastive(fast, seg1, slow, seg2, g, outer_exp):
    n1 = len(fast)
    l_sf = 0.0
    for i in range(n1):
        aff = [math.exp(_sim(fast[i], slow[j], g)) if outer_exp else _sim(fast[i], slow[j], g)
               for j in range(len(slow))]
        num = sum(a for a, s in zip(aff, seg2) if s == seg1[i])
        l_sf -= math.log(num / sum(aff))
    l_conc = 0.0
    for i in range(n1):
        mates = [slow[j] for j in range(len(slow)) if seg2[j] == seg1[i]]
        mean = [sum(m[e] for m in mates) / len(mates) for e in range(len(fast[i]))]
        l_conc += sum((fast[i][e] - mean[e]) ** 2 for e in range(len(mean)))
    return l_sf / n1, l_conc / n1


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("outer_exp", [True, False])
def test_contrastive_losses_match_transcription(seed, outer_exp):
    rng = np.random.default_rng(seed)
    n1, n2, E = int(rng.integers(2, 9)), int(rng.integers(3, 9)), int(rng.integers(1, 5))
    seg2 = rng.integers(1, 4, n2)
    seg1 = rng.choice(np.unique(seg2), n1)
    fast, slow = rng.standard_normal((n1, E)), rng.standard_normal((n2, E))
    g = float(rng.uniform(0.2, 3.0))
    l_sf, l_conc, _, _ = contrastive_losses(fast, seg1, slow, seg2, g, outer_exp)
    r_sf, r_conc = _oracle_contrastive(fast.tolist(), seg1, slow.tolist(), seg2, g, outer_exp)
    assert abs(l_sf - r_sf) < 1e-12
    assert abs(l_conc - r_conc) < 1e-12


@given(st.integers(0, 10_000))
def test_similarity_matches_transcription(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 4))
    g = float(rng.uniform(0.1, 3))
    assert abs(similarity(x, y, g) - _sim(x, y, g)) < 1e-12
    assert similarity(x, x, g) == 1.0


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("outer_exp", [True, False])
def test_contrastive_gradients_match_finite_differences(seed, outer_exp):
    rng = np.random.default_rng(50 + seed)
    seg2 = np.array([1, 2, 3, 1, 2, 3])
    seg1 = rng.choice([1, 2, 3], 5)
    fast, slow = rng.standard_normal((5, 3)), rng.standard_normal((6, 3))
    _, _, g_sf, g_conc = contrastive_losses(fast, seg1, slow, seg2, 0.7, outer_exp)
    h = 1e-6
    for i, e in itertools.product(range(5), range(3)):
        fp, fm = fast.copy(), fast.copy()
        fp[i, e] += h
        fm[i, e] -= h
        a = contrastive_losses(fp, seg1, slow, seg2, 0.7, outer_exp)
        b = contrastive_losses(fm, seg1, slow, seg2, 0.7, outer_exp)
        assert abs((a[0] - b[0]) / (2 * h) - g_sf[i, e]) < 1e-7
        assert abs((a[1] - b[1]) / (2 * h) - g_conc[i, e]) < 1e-7


def test_contrastive_batching_errors():
    f = np.zeros((2, 3))
    with pytest.raises(BatchingError):
        contrastive_losses(f, np.array([1, 2]), np.zeros((1, 3)), np.array([1]))
    with pytest.raises(BatchingError):
        contrastive_losses(np.zeros((0, 3)), np.array([]), f, np.array([1, 2]))


def test_split_halves_keeps_segments_on_both_sides(rng):
    lab = np.repeat([1, 2, 3, 4], [5, 2, 1, 6])
    r1, r2 = split_halves(lab, rng)
    assert set(lab[r1]) <= set(lab[r2])
    assert not set(r1) & set(r2)


def test_slow_field_ema():
    slow = np.ones((2, 2))
    update_slow_field(np.zeros((2, 2)), slow, 0.99)
    np.testing.assert_allclose(slow, 0.99)
    same = slow.copy()
    update_slow_field(np.full((2, 2), 5.0), slow, 1.0)
    assert np.array_equal(slow, same)


# ---------------------------------------------------------------- assignment

def _exhaustive(scores):
    n, k = scores.shape
    best, arg = -np.inf, None
    for perm in itertools.permutations(range(k), n):
        s = sum(scores[i, perm[i]] for i in range(n))
        if s > best + 1e-12:
            best, arg = s, perm
    return best, arg


@given(st.integers(0, 10_000))
def test_hungarian_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    k = int(rng.integers(n, 7))
    scores = rng.random((n, k))
    slots = solve_assignment(scores)
    assert len(set(slots.tolist())) == n
    best, _ = _exhaustive(scores)
    assert abs(scores[np.arange(n), slots].sum() - best) < 1e-12


def test_assignment_capacity():
    with pytest.raises(CapacityError):
        solve_assignment(np.zeros((3, 2)))


def test_assignment_loss_transcription(rng):
    seg = np.array([4, 4, 9, 9, 9, 2])
    logits = rng.standard_normal((6, 5))
    w = rng.uniform(0.5, 2, 6)
    loss, grad, mapping = assignment_loss(seg, logits, w)
    p = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    ids, scores = assignment_scores(seg, p)
    for r, s in enumerate(ids):
        assert abs(scores[r] - p[seg == s].mean(0)).max() < 1e-12
    ref = -sum(w[i] * math.log(p[i, mapping[int(seg[i])]]) for i in range(6)) / 6
    assert abs(loss - ref) < 1e-12
    assert len(set(mapping.values())) == 3


def test_render_instance_map_modes():
    out = np.zeros((2, 2, 3))
    out[0, 0, 2] = 1.0
    out[1, 1] = [5.0, 5.0, 5.0]
    sem = np.full((2, 2), ClassId.BUILDING)
    sem[0, 1] = ClassId.ROAD
    ids = render_instance_map(out, sem, "assignment")
    assert ids.tolist() == [[3, 0], [1, 1]]
    cm = ClusterModel(np.array([[0.0, 0, 0], [5.0, 5, 5]]), 0.1, 1)
    ids = render_instance_map(out, sem, "contrastive", cm)
    assert ids.tolist() == [[1, 0], [1, 2]]
    with pytest.raises(PreconditionError):
        render_instance_map(out, sem, "contrastive")


def test_instance_config_init_scale():
    assert InstanceConfig().std() == 0.3
    assert InstanceConfig(mode="contrastive").std() == 0.1
    assert InstanceConfig(init_std=0.05).std() == 0.05


# ---------------------------------------------------------------- clustering

def _oracle_density(emb, eps, min_pts):
    """Neighbourhood graph over core points by explicit pair loops."""
    n = len(emb)
    d = np.sqrt(((emb[:, None] - emb[None]) ** 2).sum(-1))
    core = [(d[i] <= eps).sum() >= min_pts for i in range(n)]
    lab = [-1] * n
    nxt = 0
    for i in range(n):
        if not core[i] or lab[i] >= 0:
            continue
        stack = [i]
        lab[i] = nxt
        while stack:
            a = stack.pop()
            for b in range(n):
                if core[b] and lab[b] < 0 and d[a, b] <= eps:
                    lab[b] = nxt
                    stack.append(b)
        nxt += 1
    for i in range(n):
        if not core[i]:
            cands = [(d[i, j], j) for j in range(n) if core[j] and d[i, j] <= eps]
            if cands:
                lab[i] = lab[min(cands)[1]]
    return np.array(lab)


@given(st.integers(0, 10_000))
def test_density_labels_match_bruteforce(seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-3, 3, (int(rng.integers(1, 4)), 2))
    emb = np.concatenate([c + 0.3 * rng.standard_normal((int(rng.integers(3, 25)), 2))
                          for c in centers] + [rng.uniform(-4, 4, (5, 2))])
    eps = float(rng.uniform(0.2, 0.8))
    min_pts = int(rng.integers(2, 6))
    assert np.array_equal(density_labels(emb, eps, min_pts), _oracle_density(emb, eps, min_pts))


def test_cluster_embeddings_orders_by_size(rng):
    a = rng.normal(0, 0.05, (120, 3))
    b = rng.normal(2, 0.05, (60, 3))
    c = rng.normal(-2, 0.05, (10, 3))
    cm = cluster_embeddings(np.concatenate([b, a, c]), eps=0.2, min_pts=5, min_cluster_size=50)
    assert cm.sizes == (120, 60)
    np.testing.assert_allclose(cm.centroids[0], a.mean(0))
    back = ClusterModel.from_dict(cm.to_dict())
    assert np.array_equal(back.assign(a[:5]), [0] * 5)
    with pytest.raises(ClusteringError):
        cluster_embeddings(c, eps=0.2, min_pts=5, min_cluster_size=50)
    with pytest.raises(ClusteringError):
        cluster_embeddings(np.zeros((0, 3)))
