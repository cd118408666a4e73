import dataclasses

import numpy as np
import pytest

from branchtopo import autodiff as ad
from branchtopo.autodiff import Tensor
from branchtopo.errors import DataError, ShapeError
from branchtopo.model import (NetworkConfig, PFELevel, Scale, branchnet_forward, build_plan,
                              init_params, layer_specs, load_arrays, load_checkpoint,
                              pfe_forward, pfp_forward, recalibrate_batchnorm, save_checkpoint)

from conftest import tiny_clouds, tiny_config

# Trainable parameter count of the published configuration at dim=3, from a
# separate walk over the layer table (FC weight + bias, plus BN scale/shift).
PAPER_3D_PARAMS = 1_674_002


def test_paper_param_count_golden():
    assert init_params(NetworkConfig.paper(3)).n_trainable() == PAPER_3D_PARAMS


def test_paper_table_widths():
    cfg = NetworkConfig.paper(3)
    l1, l2, l3 = cfg.pfe_levels
    assert l1.k == 512 and [s.radius for s in l1.scales] == [1, 4, 16]
    assert [s.widths for s in l1.scales] == [(32, 32, 64), (64, 64, 128), (64, 96, 128)]
    assert l1.global_width == 128 and l2.global_width == 256 and l2.k == 128
    assert [s.widths for s in l2.scales] == [(64, 64, 128), (128, 128, 256), (128, 128, 256)]
    assert l3.group_all and l3.widths == (256, 512, 1024)
    assert cfg.pfp_stages == ((256, 128), (256, 128), (128, 128, 128))
    assert cfg.head_embed == (128, 15) and cfg.head_semantic == (128, 3)
    assert cfg.R == 4e-3


def test_desk_preset():
    cfg = NetworkConfig.desk(2)
    assert cfg.n_points == 1024 and [lv.k for lv in cfg.pfe_levels[:2]] == [128, 32]
    assert cfg.pfe_levels[0].scales[0].max_k == 16
    assert cfg.pfe_levels[2].widths == (128, 256, 512)


def test_init_deterministic():
    a, b = init_params(tiny_config(), 7), init_params(tiny_config(), 7)
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()
    c = init_params(tiny_config(), 8)
    assert any(a.params[k].data.tobytes() != c.params[k].data.tobytes() for k in a.params)


def test_head_last_layers_plain():
    mp = init_params(NetworkConfig.paper(3))
    specs = {s.name: s for s in layer_specs(mp.config)}
    for head in ("td1.fc1", "td2.fc1"):
        assert not specs[head].bn
        assert head + ".bn.gamma" not in mp.params and head + ".bn.mean" not in mp.buffers
    assert all(s.bn for n, s in specs.items() if n not in ("td1.fc1", "td2.fc1"))
    assert specs["td1.fc1"].width == 15 and specs["td2.fc1"].width == 3
    assert [n for n in specs if n.startswith("pfp3")] == ["pfp3.fc0", "pfp3.fc1", "pfp3.fc2"]
    assert {specs[f"pfp3.fc{j}"].width for j in range(3)} == {128}


def test_group_all_level_output():
    mp = init_params(NetworkConfig.paper(3))
    lvl = mp.config.pfe_levels[2]
    rng = np.random.default_rng(0)
    coords = rng.random((1, 20, 3))
    feats = Tensor(rng.random((1, 20, 256)).astype(np.float32))
    sub, out = pfe_forward(lvl, coords, feats, mp, 3, train=False)
    assert sub.shape == (1, 1, 3) and out.shape == (1, 1, 1024)


def test_too_many_centroids():
    mp = init_params(tiny_config())
    with pytest.raises(ShapeError):
        pfe_forward(mp.config.pfe_levels[0], np.random.default_rng(0).random((1, 8, 2)), None,
                    mp, 1, train=False)
    with pytest.raises(ValueError):
        NetworkConfig.scaled(dim=2, n_points=8, centroids=(16, 4), max_k=8, divisor=8)


def _toy_cfg():
    lvl = PFELevel(2, (Scale(1.5, (1,), 4),), global_width=None)
    return NetworkConfig(dim=2, n_points=4, R=1.0, pfe_levels=(lvl,), pfp_stages=((1,),),
                         head_embed=(15,), head_semantic=(3,), use_global_coords=False)


def test_toy_pfe_by_hand():
    mp = init_params(_toy_cfg())
    mp.params["pfe1.s0.fc0.W"].data[:] = [[1.0], [2.0]]
    coords = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [3.0, 3.0]]])
    sub, out = pfe_forward(mp.config.pfe_levels[0], coords, None, mp, 1, train=False)
    # centroids (0,0) then the farthest point (3,3); the first ball holds the
    # three unit-square corners, whose relative coordinates map to 0, 1 and 2
    np.testing.assert_array_equal(sub[0], [[0.0, 0.0], [3.0, 3.0]])
    s = 1.0 / np.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out.data[0, :, 0], [2.0 * s, 0.0], rtol=1e-6)


def test_pfp_identity_interpolation_and_zero_skip():
    cfg = tiny_config()
    mp = init_params(cfg, 3)
    rng = np.random.default_rng(1)
    pts = rng.random((1, 10, 2))
    src = Tensor(rng.normal(size=(1, 10, 128 // 8)).astype(np.float32))
    skip_w = 256 // 8 * 0 + mp.params["pfp1.fc0.W"].shape[0] - src.shape[-1]
    skip = Tensor(np.zeros((1, 10, skip_w), dtype=np.float32))
    out = pfp_forward(cfg.pfp_stages[0], pts, src, pts, skip, mp, 1, train=False)
    x = np.concatenate([src.data[0], np.zeros((10, skip_w), np.float32)], axis=1).astype(np.float64)
    for j in range(len(cfg.pfp_stages[0])):
        n = f"pfp1.fc{j}"
        p = {k: v.data.astype(np.float64) for k, v in mp.params.items() if k.startswith(n + ".")}
        y = x @ p[n + ".W"] + p[n + ".b"]
        y = (y - mp.buffers[n + ".bn.mean"]) / np.sqrt(mp.buffers[n + ".bn.var"] + 1e-5)
        x = np.maximum(y * p[n + ".bn.gamma"] + p[n + ".bn.beta"], 0.0)
    np.testing.assert_allclose(out.data[0], x, rtol=1e-4, atol=1e-5)


@pytest.mark.parametrize("dim", [2, 3])
def test_forward_shapes(dim):
    cfg = tiny_config(dim)
    mp = init_params(cfg)
    x = tiny_clouds(dim, 1)[0].coords
    pred = branchnet_forward(x, mp, "eval")
    assert pred.embeddings.shape == (64, 15) and pred.logits.shape == (64, 3)
    batch = branchnet_forward(np.stack([x, x]), mp, "train")
    assert batch.embeddings.shape == (2, 64, 15)
    with pytest.raises(ShapeError):
        branchnet_forward(x[:10], mp)
    with pytest.raises(ValueError):
        branchnet_forward(x, mp, "test")


def test_eval_permutation_equivariance_exact(rng):
    mp = init_params(tiny_config(), 2)
    x = tiny_clouds(2, 1)[0].coords
    perm = rng.permutation(len(x))
    a = branchnet_forward(x, mp, "eval")
    b = branchnet_forward(x[perm], mp, "eval")
    assert np.array_equal(a.embeddings[perm], b.embeddings)
    assert np.array_equal(a.logits[perm], b.logits)


def test_eval_batch_independent():
    mp = init_params(tiny_config(), 2)
    clouds = tiny_clouds(2, 2)
    x = np.stack([c.coords for c in clouds])
    both = branchnet_forward(x, mp, "eval")
    one = branchnet_forward(x[1], mp, "eval")
    np.testing.assert_allclose(both.embeddings[1], one.embeddings, rtol=1e-5, atol=1e-6)
    again = branchnet_forward(x, mp, "eval")
    assert again.embeddings.tobytes() == both.embeddings.tobytes()


def _with_stats(mp, rng):
    # nontrivial running statistics so eval mode is not a near-identity
    for k in mp.buffers:
        if k.endswith(".mean"):
            mp.buffers[k] = rng.normal(0, 0.1, mp.buffers[k].shape).astype(np.float32)
    return mp


def test_translation_baseline_vs_global(rng):
    # no padding rows here: they would not move with the cloud
    x = rng.random((64, 2)) * 0.8
    shifted = x + 0.1
    base = _with_stats(init_params(tiny_config(use_global_coords=False), 4), rng)
    a, b = branchnet_forward(x, base), branchnet_forward(shifted, base)
    scale = np.abs(a.embeddings).max()
    base_gap = np.abs(a.embeddings - b.embeddings).max()
    assert base_gap < 1e-4 * scale  # float32 rounding only
    full = _with_stats(init_params(tiny_config(use_global_coords=True), 4), rng)
    full.params["pfe1.g.fc0.W"].data[-2:] *= 50.0  # rows fed by the absolute coordinates
    a, b = branchnet_forward(x, full), branchnet_forward(shifted, full)
    assert np.abs(a.embeddings - b.embeddings).max() > 1e-3 * np.abs(a.embeddings).max()


def test_baseline_has_no_global_layers():
    names = {s.name for s in layer_specs(tiny_config(use_global_coords=False))}
    assert not any(".g." in n for n in names)
    assert "pfe1.g.fc0" in {s.name for s in layer_specs(tiny_config())}


def test_checkpoint_roundtrip(tmp_path):
    mp = init_params(tiny_config(), 11)
    mp.buffers["pfe1.s0.fc0.bn.var"][:] = 2.5
    save_checkpoint(tmp_path / "m.bts", mp, {"step": 3})
    back, meta = load_checkpoint(tmp_path / "m.bts")
    assert meta["step"] == 3 and back.config == mp.config
    for k, v in mp.arrays().items():
        assert back.arrays()[k].tobytes() == v.tobytes()
    x = tiny_clouds(2, 1)[0].coords
    assert branchnet_forward(x, back).embeddings.tobytes() == branchnet_forward(x, mp).embeddings.tobytes()


def test_checkpoint_mismatch():
    arrays = init_params(tiny_config(), 0).arrays()
    with pytest.raises(DataError, match="mismatch"):
        load_arrays(tiny_config(3), arrays)
    arrays.pop("td1.fc1.W")
    with pytest.raises(DataError, match="mismatch"):
        load_arrays(tiny_config(), arrays)


def test_recalibrate_matches_train_stats():
    mp = init_params(tiny_config(), 5)
    x = np.stack([c.coords for c in tiny_clouds(2, 3)])
    plan = build_plan(x, mp.config)
    with ad.no_grad():
        tr = branchnet_forward(x, mp, "train", plan).embeddings
    fresh = init_params(tiny_config(), 5)
    gap_before = np.abs(branchnet_forward(x, fresh, "eval", plan).embeddings - tr).max()

    recalibrate_batchnorm(mp, [(x, plan)])
    assert mp.bn_momentum == 0.9
    once = {k: v.copy() for k, v in mp.buffers.items()}
    gap_after = np.abs(branchnet_forward(x, mp, "eval", plan).embeddings - tr).max()
    assert gap_after < 1e-3 * gap_before
    # the same batch twice averages to the same statistics
    recalibrate_batchnorm(mp, [(x, plan), (x, plan)])
    for k in once:
        np.testing.assert_allclose(mp.buffers[k], once[k], rtol=1e-5, atol=1e-8)


def test_forward_does_not_touch_params():
    mp = init_params(tiny_config(), 5)
    before = {k: v.data.copy() for k, v in mp.params.items()}
    branchnet_forward(tiny_clouds(2, 1)[0].coords, mp, "train")
    assert all(np.array_equal(before[k], mp.params[k].data) for k in before)


def test_config_dict_roundtrip():
    cfg = dataclasses.replace(NetworkConfig.desk(3), use_global_coords=False)
    assert NetworkConfig.from_dict(cfg.to_dict()) == cfg
