import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchtopo.cluster import (extract_instances, flat_shift, localize_junctions, mean_shift,
                                split_endpoints)
from branchtopo.metrics import dic, ds_c, match_centers, sbd, structure_report

from oracles import best_matching_size

R = 0.03


# mean-shift -------------------------------------------------------------------

def test_identical_points():
    res = mean_shift(np.full((20, 3), 0.25), 0.1)
    assert res.n_clusters == 1
    np.testing.assert_allclose(res.centers[0], 0.25)
    assert np.all(res.assignment == 0)


def test_planted_1d_blobs(rng):
    pts = np.concatenate([rng.normal(0, 0.1, 200), rng.normal(10, 0.1, 200)])
    res = mean_shift(pts, 1.0)
    assert res.n_clusters == 2
    c = np.sort(res.centers[:, 0])
    assert abs(c[0]) < 0.05 and abs(c[1] - 10) < 0.05
    assert np.all(res.assignment[:200] == res.assignment[0])
    assert np.all(res.assignment[200:] != res.assignment[0])


def test_wide_bandwidth_single_center(rng):
    pts = rng.random((100, 2))
    assert mean_shift(pts, np.sqrt(2.0) + 1e-9).n_clusters == 1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), bw=st.floats(0.05, 1.0))
def test_centers_are_fixed_points(seed, bw):
    pts = np.random.default_rng(seed).random((60, 2))
    res = mean_shift(pts, bw)
    tol = 1e-3 * bw
    new, counts = flat_shift(res.centers, pts, bw)
    assert np.all(counts > 0)
    assert np.all(np.sqrt(((new - res.centers) ** 2).sum(1)) < tol)
    # every point goes to its nearest center
    d = ((pts[:, None] - res.centers[None]) ** 2).sum(-1)
    assert np.all(d[np.arange(60), res.assignment] == d.min(1))


def test_mean_shift_validation():
    with pytest.raises(ValueError):
        mean_shift(np.zeros((3, 2)), 0.0)


def _blobs(rng, c, d=15, gap=4 * 0.7, sd=0.02, n=12):
    centers = np.eye(d)[:c] * gap
    emb = np.concatenate([ctr + rng.normal(0, sd, (n, d)) for ctr in centers])
    return emb, np.repeat(np.arange(c), n)


@pytest.mark.parametrize("c", [1, 2, 5])
def test_extract_instances_blobs(rng, c):
    emb, truth = _blobs(rng, c)
    logits = np.zeros((len(emb), 3))
    logits[:, 1] = 1.0
    labels = extract_instances(emb, logits, 0.7)
    assert np.unique(labels).size == c
    assert sbd(labels, truth) == 100.0


def test_extract_instances_skips_padding(rng):
    emb, _ = _blobs(rng, 3)
    logits = rng.normal(size=(len(emb), 3))
    labels = extract_instances(emb, logits, 0.7)
    pad = np.argmax(logits, -1) == 0
    assert np.all(labels[pad] == -1) and np.all(labels[~pad] >= 0)
    all_pad = np.zeros_like(logits)
    all_pad[:, 0] = 5.0
    assert np.all(extract_instances(emb, all_pad) == -1)


def test_localize_junctions():
    rng = np.random.default_rng(3)
    pts = np.concatenate([rng.normal(0.3, 0.002, (10, 2)), rng.normal(0.5, 0.002, (10, 2)),
                          rng.random((30, 2))])
    logits = np.zeros((50, 3))
    logits[:20, 2] = 1.0
    logits[20:, 1] = 1.0
    centers = localize_junctions(logits, pts, 0.02)
    assert len(centers) == 2
    assert localize_junctions(logits[20:], pts[20:]).shape == (0, 2)
    # blobs 0.005 apart merge
    close = np.concatenate([np.full((5, 2), 0.3), np.full((5, 2), 0.305)])
    lg = np.zeros((10, 3))
    lg[:, 2] = 1
    assert len(localize_junctions(lg, close, 0.02)) == 1


def test_split_endpoints():
    # three branches meet at the origin; the tip at (1, 1) ends next to a
    # second branch
    coords = np.array([[0.0, 0.0], [0.01, 0.0], [0.0, 0.01], [1.0, 1.0], [1.0, 0.99]])
    labels = np.array([0, 1, 2, 3, 4])
    j, t = split_endpoints(np.array([[0.0, 0.0], [1.0, 1.0]]), coords, labels, 0.03)
    np.testing.assert_array_equal(j, [[0.0, 0.0]])
    np.testing.assert_array_equal(t, [[1.0, 1.0]])
    j, _ = split_endpoints(np.array([[0.0, 0.0], [1.0, 1.0]]), coords, labels, 0.03, min_branches=2)
    assert len(j) == 2
    labels[3:] = -1  # unlabeled points never count
    j, t = split_endpoints(np.array([[1.0, 1.0]]), coords, labels, 0.03, min_branches=1)
    assert len(j) == 0 and len(t) == 1
    j, t = split_endpoints(np.zeros((0, 2)), coords, labels)
    assert j.shape == (0, 2) and t.shape == (0, 2)


# metrics -----------------------------------------------------------------------

def test_sbd_examples(rng):
    gt = np.array([0, 0, 1])
    assert sbd(gt, gt) == 100.0
    assert sbd(np.array([5, 5, 5]), gt) == pytest.approx(65.0, abs=1e-12)
    a, b = rng.integers(0, 4, 50), rng.integers(0, 6, 50)
    assert sbd(a, b) == sbd(b, a)
    assert sbd(np.full(3, -1), gt) == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_sbd_invariances(seed):
    r = np.random.default_rng(seed)
    a, b = r.integers(0, 5, 40), r.integers(0, 4, 40)
    base = sbd(a, b)
    perm = r.permutation(40)
    relabel = r.permutation(100)[:5]
    assert sbd(relabel[a][perm], b[perm]) == pytest.approx(base, abs=1e-12)
    assert 0.0 <= base <= 100.0


def test_dic_examples(rng):
    assert dic([3, 4], [3, 4]) == 0.0
    assert dic([5, 3], [4, 4]) == 1.0
    p, g = rng.integers(0, 30, 20), rng.integers(0, 30, 20)
    assert dic(p, g) == pytest.approx(sum(abs(int(x) - int(y)) for x, y in zip(p, g)) / 20)
    with pytest.raises(ValueError):
        dic([], [])


def test_ds_c_examples():
    gt = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9], [0.1, 0.9]])
    assert ds_c(gt, gt)["ds_c"] == 100.0
    pred = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9], [0.5, 0.1]])
    r = ds_c(pred, gt, R)
    assert (r["tp"], r["fp"], r["fn"]) == (3, 1, 1)
    assert r["ds_c"] == 75.0
    v = ds_c(np.zeros((0, 2)), np.zeros((0, 2)))
    assert v["ds_c"] == 100.0 and v["vacuous"]
    assert ds_c(np.zeros((0, 2)), gt)["ds_c"] == 0.0
    with pytest.raises(ValueError):
        ds_c(gt, gt, 0.0)


def test_greedy_prefers_closest():
    pred = np.array([[0.0, 0.0]])
    gt = np.array([[0.02, 0.0], [0.01, 0.0]])
    assert match_centers(pred, gt, R) == [(0, 1)]


def planted(r, radius=R):
    """Ground-truth centers on a jittered lattice spaced > 2 radius, with misses and spurious hits."""
    n = int(r.integers(1, 7))
    cells = r.permutation(64)[:n]
    gt = np.stack([cells % 8, cells // 8], 1) * (3 * radius) + r.uniform(0, 0.2 * radius, (n, 2))
    hit = r.random(n) < 0.7
    ang = r.uniform(0, 2 * np.pi, n)
    rad = np.where(hit, r.uniform(0, 0.9 * radius, n), r.uniform(1.1 * radius, 1.4 * radius, n))
    pred = gt + np.stack([np.cos(ang), np.sin(ang)], 1) * rad[:, None]
    keep = r.random(n) < 0.85
    pred = pred[keep]
    extra = int(r.integers(0, 3))
    pred = np.concatenate([pred, 1.0 + r.random((extra, 2))])
    return pred[r.permutation(len(pred))], gt


@pytest.mark.parametrize("seed", range(40))
def test_greedy_agrees_with_exhaustive(seed):
    pred, gt = planted(np.random.default_rng(seed))
    tp = len(match_centers(pred, gt, R))
    assert tp == best_matching_size(pred, gt, R)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_ds_c_properties(seed):
    r = np.random.default_rng(seed)
    pred, gt = planted(r)
    base = ds_c(pred, gt, R)["ds_c"]
    assert 0.0 <= base <= 100.0
    assert ds_c(pred[::-1], gt[::-1], R)["ds_c"] == base
    spurious = np.concatenate([pred, [[5.0, 5.0]]])
    assert ds_c(spurious, gt, R)["ds_c"] <= base


def test_structure_report():
    rep = structure_report(np.array([0, 0, 1, 1]), np.array([2, 2, 2, 3]),
                           np.zeros((0, 2)), np.array([[0.5, 0.5]]))
    assert rep.dic == 0.0 and rep.fn == 1 and rep.ds_c == 0.0
    assert rep.ds_c == pytest.approx(100 * 2 * rep.tp / max(2 * rep.tp + rep.fp + rep.fn, 1))
