import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchtopo import autodiff as ad
from branchtopo.autodiff import Tensor, gradcheck
from branchtopo.errors import DataError
from branchtopo.losses import LossWeights, combined_loss, cross_entropy, discriminative_loss

from oracles import cross_entropy_naive, dlf_bruteforce

LW = LossWeights()


def dlf_values(emb, inst, mask=None, lw=LW):
    emb = np.asarray(emb, dtype=np.float64)
    mask = np.ones(len(inst), bool) if mask is None else mask
    t = discriminative_loss(Tensor(emb), np.asarray(inst), mask, lw)
    return {k: float(v.data) for k, v in t.items()}


def test_hand_case_separated():
    d = dlf_values([[2.0], [2.0], [-2.0]], [0, 0, 1])
    assert d["var"] == 0.0 and d["dist"] == 0.0
    assert d["reg"] == pytest.approx(2.0, rel=1e-12)
    assert d["dlf"] == pytest.approx(0.002, rel=1e-12)


def test_hand_case_close_pair():
    d = dlf_values([[0.5], [-0.5]], [3, 7])
    assert d["var"] == 0.0
    assert d["dist"] == pytest.approx(4.0, rel=1e-12)
    assert d["reg"] == pytest.approx(0.5, rel=1e-12)
    assert d["dlf"] == pytest.approx(4.0005, rel=1e-12)


def test_single_cluster_has_no_push():
    d = dlf_values([[0.0, 0.0], [3.0, 0.0]], [1, 1])
    assert d["dist"] == 0.0
    assert d["var"] == pytest.approx(0.8 ** 2, rel=1e-12)


def test_no_instances():
    with pytest.raises(DataError, match="no instances"):
        dlf_values([[0.0]], [0], np.zeros(1, bool))


def test_padding_excluded_from_dlf():
    base = dlf_values([[0.5], [-0.5]], [0, 1])
    padded = dlf_values([[0.5], [-0.5], [99.0]], [0, 1, -1], np.array([1, 1, 0], bool))
    assert padded == base


@pytest.mark.parametrize("seed", range(50))
def test_matches_bruteforce(seed):
    r = np.random.default_rng(seed)
    n, c, d = r.integers(2, 21), r.integers(1, 5), r.integers(1, 6)
    emb = r.normal(0, 1.5, size=(n, d))
    inst = r.integers(0, c, size=n) * 10 + 3
    mask = r.random(n) < 0.85
    mask[0] = True
    got = dlf_values(emb, inst, mask)
    ref = dlf_bruteforce(emb, inst, mask)
    for k, v in zip(("dlf", "var", "dist", "reg"), ref):
        assert got[k] == pytest.approx(v, rel=1e-9, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_relabel_and_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(3, 15))
    emb = r.normal(size=(n, 3))
    inst = r.integers(0, 3, size=n)
    base = dlf_values(emb, inst)
    perm = r.permutation(n)
    ids = r.permutation(50)[:3]
    moved = dlf_values(emb[perm], ids[inst[perm]])
    for k in base:
        assert moved[k] == pytest.approx(base[k], rel=1e-12, abs=1e-15)


def test_zero_terms_iff_conditions():
    # all within delta_v of their mean and means 3.0+ apart
    emb = np.array([[0.0, 0.0], [0.6, 0.0], [3.3, 0.0], [3.3, 0.6]])
    d = dlf_values(emb, [0, 0, 1, 1])
    assert d["var"] == 0.0 and d["dist"] == 0.0
    d2 = dlf_values(emb * 3.0, [0, 0, 1, 1])
    assert d2["var"] > 0


def test_cross_entropy_examples(rng):
    assert float(cross_entropy(Tensor(np.zeros((5, 3))), [0, 1, 2, 0, 1]).data) == pytest.approx(math.log(3), abs=1e-12)
    logits = np.zeros((4, 3))
    cls = np.array([0, 2, 1, 1])
    logits[np.arange(4), cls] = 20.0
    assert float(cross_entropy(Tensor(logits), cls).data) < 1e-3
    z = rng.normal(0, 3, size=(30, 3))
    k = rng.integers(0, 3, size=30)
    assert float(cross_entropy(Tensor(z), k).data) == pytest.approx(cross_entropy_naive(z, k), rel=1e-12)
    big = np.array([[1000.0, 0.0, -1000.0]])
    assert np.isfinite(float(cross_entropy(Tensor(big), [2]).data))


def _toy(rng, b=2, n=8):
    emb = rng.normal(0, 1.0, size=(b, n, 4))
    logits = rng.normal(size=(b, n, 3))
    cls = rng.integers(0, 3, size=(b, n))
    inst = rng.integers(0, 3, size=(b, n))
    mask = cls != 0
    mask[:, 0] = True
    return emb, logits, cls, inst, mask


def test_combined_composition(rng):
    emb, logits, cls, inst, mask = _toy(rng)
    rep = combined_loss(Tensor(emb), Tensor(logits), cls, inst, mask, LW)
    assert rep.total == pytest.approx(rep.ce + LW.w * rep.dlf, rel=1e-9)
    assert rep.dlf == pytest.approx(LW.alpha * rep.var_term + LW.beta * rep.dist_term
                                    + LW.gamma * rep.reg_term, rel=1e-9)
    per = [dlf_bruteforce(emb[i], inst[i], mask[i])[0] for i in range(2)]
    assert rep.dlf == pytest.approx(np.mean(per), rel=1e-9)
    no_w = combined_loss(Tensor(emb), Tensor(logits), cls, inst, mask, LossWeights(w=0.0))
    assert no_w.total == no_w.ce


def test_combined_perfect_separation():
    emb = np.array([[[2.0], [2.0], [-2.0]]])
    logits = np.zeros((1, 3, 3))
    rep = combined_loss(Tensor(emb), Tensor(logits), np.array([[1, 1, 2]]),
                        np.array([[0, 0, 1]]), np.ones((1, 3), bool), LW)
    assert rep.total == pytest.approx(math.log(3) + 0.05 * 0.002, rel=1e-12)


def test_combined_gradcheck(rng):
    emb, logits, cls, inst, mask = _toy(rng)
    r1 = gradcheck(lambda e: combined_loss(e, Tensor(logits), cls, inst, mask, LW).tensor, Tensor(emb))
    r2 = gradcheck(lambda z: combined_loss(Tensor(emb), z, cls, inst, mask, LW).tensor, Tensor(logits))
    assert r1.passed(1e-4) and r2.passed(1e-4), (r1.max_rel_error, r2.max_rel_error)


def test_dlf_gradcheck(rng):
    emb = rng.normal(0, 2.0, size=(12, 3))
    inst = rng.integers(0, 3, size=12)
    r = gradcheck(lambda e: discriminative_loss(e, inst, np.ones(12, bool), LW)["dlf"], Tensor(emb))
    assert r.passed(1e-4)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(delta_v=2.0, delta_d=1.0)
    with pytest.raises(ValueError):
        LossWeights(alpha=-1)


def test_shape_mismatch():
    with pytest.raises(DataError):
        cross_entropy(Tensor(np.zeros((3, 3))), [0, 1])
