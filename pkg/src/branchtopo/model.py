"""BranchNet: hierarchical point encoder/decoder with two task heads.

Encoder levels (PFE) subsample with farthest point sampling, group balls at
several radii in centroid-relative frames, run shared FC layers and max-pool.
Unless ``use_global_coords`` is off (the PointNet++-MSG baseline), the pooled
multi-scale features are concatenated with the centroid's absolute
coordinates and passed through one more shared FC layer.  Decoder stages
(PFP) interpolate features back to the denser level, append the skip-link
features and apply shared FC layers.  Both heads read the last decoder
output: a 15-d embedding head and a 3-class logit head.

Structural work (sampling, neighbourhoods, interpolation weights) depends only
on coordinates; it is collected in a :class:`Plan` that can be computed once
per point set and reused across training steps.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import pointops
from .autodiff import Tensor
from .errors import DataError, ShapeError


@dataclass(frozen=True)
class Scale:
    radius: float  # multiple of the base radius R
    widths: tuple[int, ...]
    max_k: int = 32


@dataclass(frozen=True)
class PFELevel:
    k: int  # number of sampled centroids; ignored when group_all
    scales: tuple[Scale, ...] = ()
    global_width: int | None = None
    group_all: bool = False
    widths: tuple[int, ...] = ()  # group-all FC widths


@dataclass(frozen=True)
class NetworkConfig:
    dim: int = 3
    n_points: int = 10_000
    R: float = 4e-3
    pfe_levels: tuple[PFELevel, ...] = ()
    pfp_stages: tuple[tuple[int, ...], ...] = ()
    head_embed: tuple[int, ...] = (128, 15)
    head_semantic: tuple[int, ...] = (128, 3)
    use_global_coords: bool = True
    # Skip-link pairing: decoder stage i reads the encoder output of level
    # L-2-i (the input coordinates for the last stage).
    skip_pairing: str = "encoder-decoder"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if len(self.pfp_stages) != len(self.pfe_levels):
            raise ValueError("need one decoder stage per encoder level")
        n = self.n_points
        for lvl in self.pfe_levels:
            k = 1 if lvl.group_all else lvl.k
            if k > n:
                raise ValueError(f"centroid count {k} exceeds {n} input points")
            n = k

    @property
    def embed_dim(self) -> int:
        return self.head_embed[-1]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> NetworkConfig:
        d = dict(d)
        levels = []
        for lv in d.pop("pfe_levels"):
            lv = dict(lv)
            lv["scales"] = tuple(
                Scale(s["radius"], tuple(s["widths"]), s["max_k"]) for s in lv["scales"]
            )
            lv["widths"] = tuple(lv["widths"])
            levels.append(PFELevel(**lv))
        d["pfe_levels"] = tuple(levels)
        d["pfp_stages"] = tuple(tuple(s) for s in d["pfp_stages"])
        d["head_embed"] = tuple(d["head_embed"])
        d["head_semantic"] = tuple(d["head_semantic"])
        return cls(**d)

    # presets -----------------------------------------------------------------

    @classmethod
    def paper(cls, dim: int = 3, use_global_coords: bool = True) -> NetworkConfig:
        """The published layer table (PFE 512/128/1, three decoder stages)."""
        return cls.scaled(dim=dim, n_points=10_000, centroids=(512, 128), max_k=32,
                          divisor=1, use_global_coords=use_global_coords)

    @classmethod
    def desk(cls, dim: int = 2, use_global_coords: bool = True) -> NetworkConfig:
        """CPU-sized preset: 1024 points, 128/32/1 centroids, widths halved."""
        return cls.scaled(dim=dim, n_points=1024, centroids=(128, 32), max_k=16,
                          divisor=2, use_global_coords=use_global_coords)

    @classmethod
    def scaled(cls, dim, n_points, centroids, max_k, divisor, use_global_coords=True,
               R=4e-3) -> NetworkConfig:
        def w(*xs):
            return tuple(max(1, x // divisor) for x in xs)

        k1, k2 = centroids
        levels = (
            PFELevel(k1, (Scale(1, w(32, 32, 64), max_k), Scale(4, w(64, 64, 128), max_k),
                          Scale(16, w(64, 96, 128), max_k)), w(128)[0]),
            PFELevel(k2, (Scale(4, w(64, 64, 128), max_k), Scale(16, w(128, 128, 256), max_k),
                          Scale(64, w(128, 128, 256), max_k)), w(256)[0]),
            PFELevel(1, group_all=True, widths=w(256, 512, 1024)),
        )
        stages = (w(256, 128), w(256, 128), w(128, 128, 128))
        return cls(dim=dim, n_points=n_points, R=R, pfe_levels=levels, pfp_stages=stages,
                   head_embed=w(128) + (15,), head_semantic=w(128) + (3,),
                   use_global_coords=use_global_coords)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class LayerSpec:
    name: str
    fan_in: int
    width: int
    bn: bool


def _encoder_widths(cfg: NetworkConfig) -> list[int]:
    """Feature width after each encoder level (index 0 = raw input)."""
    out = [0]
    for lvl in cfg.pfe_levels:
        if lvl.group_all:
            out.append(lvl.widths[-1])
        elif cfg.use_global_coords:
            out.append(lvl.global_width)
        else:
            out.append(sum(s.widths[-1] for s in lvl.scales))
    return out


def layer_specs(cfg: NetworkConfig) -> list[LayerSpec]:
    specs = []

    def stack(prefix, c_in, widths, plain_last=False):
        for j, width in enumerate(widths):
            last = j == len(widths) - 1
            specs.append(LayerSpec(f"{prefix}.fc{j}", c_in, width, not (plain_last and last)))
            c_in = width
        return c_in

    enc = _encoder_widths(cfg)
    for li, lvl in enumerate(cfg.pfe_levels):
        c_in = cfg.dim + enc[li]
        if lvl.group_all:
            stack(f"pfe{li + 1}", c_in, lvl.widths)
            continue
        pooled = sum(stack(f"pfe{li + 1}.s{si}", c_in, s.widths) for si, s in enumerate(lvl.scales))
        if cfg.use_global_coords:
            stack(f"pfe{li + 1}.g", pooled + cfg.dim, (lvl.global_width,))
    n_lv = len(cfg.pfe_levels)
    c = enc[-1]
    for si, widths in enumerate(cfg.pfp_stages):
        skip = enc[n_lv - 1 - si]
        c = stack(f"pfp{si + 1}", c + skip, widths)
    stack("td1", c, cfg.head_embed, plain_last=True)
    stack("td2", c, cfg.head_semantic, plain_last=True)
    return specs


@dataclass
class ModelParams:
    config: NetworkConfig
    params: dict = field(default_factory=dict)  # name -> Tensor (trainable)
    buffers: dict = field(default_factory=dict)  # name -> ndarray (running stats)
    # runtime only, not serialized
    bn_momentum: float = 0.9
    bn_unbiased: bool = True

    def n_trainable(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def arrays(self) -> dict:
        """All tensors in declared order, for serialization."""
        out = {}
        for spec in layer_specs(self.config):
            n = spec.name
            out[n + ".W"] = self.params[n + ".W"].data
            out[n + ".b"] = self.params[n + ".b"].data
            if spec.bn:
                out[n + ".bn.gamma"] = self.params[n + ".bn.gamma"].data
                out[n + ".bn.beta"] = self.params[n + ".bn.beta"].data
                out[n + ".bn.mean"] = self.buffers[n + ".bn.mean"]
                out[n + ".bn.var"] = self.buffers[n + ".bn.var"]
        return out


def init_params(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Fan-in scaled uniform FC weights, zero biases, unit batch-norm scale."""
    rng = np.random.default_rng(seed)
    mp = ModelParams(cfg)
    for spec in layer_specs(cfg):
        bound = np.sqrt(1.0 / spec.fan_in)
        w = rng.uniform(-bound, bound, size=(spec.fan_in, spec.width)).astype(dtype)
        mp.params[spec.name + ".W"] = Tensor(w, requires_grad=True, name=spec.name + ".W")
        mp.params[spec.name + ".b"] = Tensor(np.zeros(spec.width, dtype), True, spec.name + ".b")
        if spec.bn:
            mp.params[spec.name + ".bn.gamma"] = Tensor(np.ones(spec.width, dtype), True,
                                                        spec.name + ".bn.gamma")
            mp.params[spec.name + ".bn.beta"] = Tensor(np.zeros(spec.width, dtype), True,
                                                       spec.name + ".bn.beta")
            mp.buffers[spec.name + ".bn.mean"] = np.zeros(spec.width, dtype)
            mp.buffers[spec.name + ".bn.var"] = np.ones(spec.width, dtype)
    return mp


def load_arrays(cfg: NetworkConfig, arrays: dict) -> ModelParams:
    """Rebuild ModelParams from serialized arrays, checking every shape."""
    ref = init_params(cfg, 0, np.float32)
    expected = ref.arrays()
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise DataError(f"checkpoint/config mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, arr in expected.items():
        if tuple(arrays[name].shape) != arr.shape:
            raise DataError(f"checkpoint/config mismatch for {name}: "
                            f"{tuple(arrays[name].shape)} vs {arr.shape}")
    for name in ref.params:
        ref.params[name].data = np.array(arrays[name], dtype=np.float32)
    for name in ref.buffers:
        ref.buffers[name] = np.array(arrays[name], dtype=np.float32)
    return ref


# ---------------------------------------------------------------------------
# structural plan


@dataclass
class LevelPlan:
    centroids: np.ndarray  # (B, K) indices into the level's input points
    neighbors: list  # per scale: (B, K, max_k) indices
    rel: list  # per scale: (B, K, max_k, dim) relative coordinates
    sub_coords: np.ndarray  # (B, K, dim)


@dataclass
class Plan:
    order: np.ndarray  # (B, N) canonical (lexicographic) row order
    inverse: np.ndarray  # (B, N) inverse permutation
    coords: list  # per level: (B, N_l, dim), level 0 = sorted input
    levels: list  # LevelPlan per encoder level
    interp: list  # per decoder stage: (idx (B, M, 3), w (B, M, 3))


def _level_plan(coords, lvl: PFELevel, R: float) -> LevelPlan:
    b, n, d = coords.shape
    if lvl.group_all:
        cent = np.stack([pointops.farthest_point_sample(c, 1) for c in coords])
        nb = np.broadcast_to(np.arange(n), (b, 1, n)).copy()
        rel = coords[:, None, :, :] - np.take_along_axis(coords, cent[..., None], 1)[:, :, None, :]
        return LevelPlan(cent, [nb], [rel], np.take_along_axis(coords, cent[..., None], 1))
    cent = np.stack([pointops.farthest_point_sample(c, lvl.k) for c in coords])
    neighbors, rels = [], []
    for s in lvl.scales:
        nb = np.stack([
            pointops.ball_query(c, ci, s.radius * R, s.max_k).neighbor_lists
            for c, ci in zip(coords, cent)
        ])
        rel = np.stack([
            pointops.group_relative(c, None, pointops.NeighborIndex(ci, nbi, s.radius * R))
            for c, ci, nbi in zip(coords, cent, nb)
        ])
        neighbors.append(nb)
        rels.append(rel)
    sub = np.take_along_axis(coords, cent[..., None], 1)
    return LevelPlan(cent, neighbors, rels, sub)


def build_plan(coords: np.ndarray, cfg: NetworkConfig) -> Plan:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 2:
        coords = coords[None]
    if coords.shape[1:] != (cfg.n_points, cfg.dim):
        raise ShapeError(f"expected (B, {cfg.n_points}, {cfg.dim}) coordinates, got {coords.shape}")
    order = np.stack([pointops.lex_order(c) for c in coords])
    inverse = np.argsort(order, axis=1)
    cur = np.take_along_axis(coords, order[..., None], 1)
    level_coords, levels = [cur], []
    for lvl in cfg.pfe_levels:
        lp = _level_plan(cur, lvl, cfg.R)
        levels.append(lp)
        cur = lp.sub_coords
        level_coords.append(cur)
    interp = []
    n_lv = len(levels)
    for si in range(n_lv):
        src = level_coords[n_lv - si]
        dst = level_coords[n_lv - 1 - si]
        pairs = [pointops.interpolation_weights(s, t, 3) for s, t in zip(src, dst)]
        interp.append((np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])))
    return Plan(order, inverse, level_coords, levels, interp)


def subset_plan(plan: Plan, rows) -> Plan:
    """Plan restricted to the batch items in ``rows``."""
    rows = np.asarray(rows)
    return Plan(
        plan.order[rows], plan.inverse[rows], [c[rows] for c in plan.coords],
        [LevelPlan(lp.centroids[rows], [n[rows] for n in lp.neighbors],
                   [r[rows] for r in lp.rel], lp.sub_coords[rows]) for lp in plan.levels],
        [(i[rows], w[rows]) for i, w in plan.interp],
    )


def stack_plans(plans: list) -> Plan:
    return Plan(
        np.concatenate([p.order for p in plans]), np.concatenate([p.inverse for p in plans]),
        [np.concatenate(c) for c in zip(*(p.coords for p in plans))],
        [LevelPlan(np.concatenate([lp.centroids for lp in lps]),
                   [np.concatenate(n) for n in zip(*(lp.neighbors for lp in lps))],
                   [np.concatenate(r) for r in zip(*(lp.rel for lp in lps))],
                   np.concatenate([lp.sub_coords for lp in lps]))
         for lps in zip(*(p.levels for p in plans))],
        [(np.concatenate([it[0] for it in its]), np.concatenate([it[1] for it in its]))
         for its in zip(*(p.interp for p in plans))],
    )


# ---------------------------------------------------------------------------
# forward


def fc(x: Tensor, mp: ModelParams, name: str, train: bool, bn: bool = True) -> Tensor:
    p = mp.params
    y = ad.matmul(x, p[name + ".W"]) + p[name + ".b"]
    if not bn:
        return y
    y = ad.batchnorm(y, p[name + ".bn.gamma"], p[name + ".bn.beta"],
                     mp.buffers[name + ".bn.mean"], mp.buffers[name + ".bn.var"], train,
                     momentum=mp.bn_momentum, unbiased=mp.bn_unbiased)
    return ad.relu(y)


def _stack(x, mp, prefix, n_layers, train, plain_last=False):
    for j in range(n_layers):
        x = fc(x, mp, f"{prefix}.fc{j}", train, bn=not (plain_last and j == n_layers - 1))
    return x


def _grouped(rel, feats, nb, dtype):
    """Relative coordinates with gathered features appended: (B, K, k, dim + C)."""
    rel_t = Tensor(rel.astype(dtype))
    if feats is None or feats.shape[-1] == 0:
        return rel_t
    b, k, m = nb.shape
    g = ad.gather_rows(feats, nb.reshape(b, k * m)).reshape(b, k, m, feats.shape[-1])
    return ad.concat([rel_t, g], axis=-1)


def pfe_forward(level: PFELevel, coords, feats, mp: ModelParams, index: int, train: bool,
                plan: LevelPlan | None = None):
    """One encoder level.  Returns ``(sub_coords, sub_feats)``.

    ``coords`` is (B, N_l, dim) numpy, ``feats`` a (B, N_l, C_l) Tensor or
    None.  ``index`` is the 1-based level number used for parameter names.
    """
    cfg = mp.config
    coords = np.asarray(coords, dtype=np.float64)
    n_l = coords.shape[1]
    if not level.group_all and level.k > n_l:
        raise ShapeError(f"PFE{index}: {level.k} centroids requested from {n_l} points")
    if plan is None:
        plan = _level_plan(coords, level, cfg.R)
    dtype = _dtype(mp)
    prefix = f"pfe{index}"
    if level.group_all:
        x = _grouped(plan.rel[0], feats, plan.neighbors[0], dtype)
        x = _stack(x, mp, prefix, len(level.widths), train)
        return plan.sub_coords, ad.max_axis(x, 2)
    pooled = []
    for si, s in enumerate(level.scales):
        x = _grouped(plan.rel[si], feats, plan.neighbors[si], dtype)
        x = _stack(x, mp, f"{prefix}.s{si}", len(s.widths), train)
        pooled.append(ad.max_axis(x, 2))
    out = ad.concat(pooled, axis=-1) if len(pooled) > 1 else pooled[0]
    if cfg.use_global_coords:
        out = ad.concat([out, Tensor(plan.sub_coords.astype(dtype))], axis=-1)
        out = fc(out, mp, f"{prefix}.g.fc0", train)
    return plan.sub_coords, out


def pfp_forward(widths, src_coords, src_feats: Tensor, dst_coords, skip_feats, mp: ModelParams,
                index: int, train: bool, interp=None) -> Tensor:
    """One decoder stage: interpolate src -> dst, append skip features, FC stack."""
    if interp is None:
        pairs = [pointops.interpolation_weights(s, t, 3) for s, t in zip(src_coords, dst_coords)]
        interp = (np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))
    idx, w = interp
    b, m, k = idx.shape
    c = src_feats.shape[-1]
    g = ad.gather_rows(src_feats, idx.reshape(b, m * k)).reshape(b, m, k, c)
    x = (g * Tensor(w[..., None].astype(_dtype(mp)))).sum(axis=2)
    if skip_feats is not None and skip_feats.shape[-1] > 0:
        x = ad.concat([x, skip_feats], axis=-1)
    return _stack(x, mp, f"pfp{index}", len(widths), train)


@dataclass
class Prediction:
    embeddings: np.ndarray  # (B, N, 15) or (N, 15)
    logits: np.ndarray  # (B, N, 3) or (N, 3)
    embed_tensor: Tensor | None = field(default=None, repr=False)
    logit_tensor: Tensor | None = field(default=None, repr=False)

    def item(self, i: int) -> Prediction:
        return Prediction(self.embeddings[i], self.logits[i])


def _dtype(mp):
    return next(iter(mp.params.values())).dtype


def branchnet_forward(coords, mp: ModelParams, mode: str = "eval", plan: Plan | None = None) -> Prediction:
    """Full network on (B, N, dim) or (N, dim) coordinates."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    train = mode == "train"
    cfg = mp.config
    coords = np.asarray(coords, dtype=np.float64)
    single = coords.ndim == 2
    if single:
        coords = coords[None]
    if coords.ndim != 3 or coords.shape[1:] != (cfg.n_points, cfg.dim):
        raise ShapeError(f"branchnet: expected (B, {cfg.n_points}, {cfg.dim}) input, got {coords.shape}")
    if plan is None:
        plan = build_plan(coords, cfg)

    feats = None
    skips = [None]
    for li, lvl in enumerate(cfg.pfe_levels):
        _, feats = pfe_forward(lvl, plan.coords[li], feats, mp, li + 1, train, plan.levels[li])
        skips.append(feats)
    n_lv = len(cfg.pfe_levels)
    x = feats
    for si, widths in enumerate(cfg.pfp_stages):
        x = pfp_forward(widths, plan.coords[n_lv - si], x, plan.coords[n_lv - 1 - si],
                        skips[n_lv - 1 - si], mp, si + 1, train, plan.interp[si])
    emb = _stack(x, mp, "td1", len(cfg.head_embed), train, plain_last=True)
    logits = _stack(x, mp, "td2", len(cfg.head_semantic), train, plain_last=True)
    # back to the caller's row order
    emb = ad.gather_rows(emb, plan.inverse)
    logits = ad.gather_rows(logits, plan.inverse)
    if single:
        emb = emb.reshape(emb.shape[1:])
        logits = logits.reshape(logits.shape[1:])
    return Prediction(emb.data, logits.data, emb, logits)


def recalibrate_batchnorm(mp: ModelParams, batches) -> None:
    """Replace running statistics by the average batch statistics of ``batches``.

    ``batches`` yields ``(coords, plan)`` pairs; parameters are untouched.
    Running averages trail the weights while they move quickly, so a pass
    with frozen weights makes eval mode match the trained function.  The
    stored variance is the population one, so on a single calibration batch
    eval mode reproduces train mode.
    """
    saved = mp.bn_momentum
    mp.bn_unbiased = False
    try:
        with ad.no_grad():
            for k, (coords, plan) in enumerate(batches):
                mp.bn_momentum = k / (k + 1.0)  # cumulative mean over batches
                branchnet_forward(coords, mp, "train", plan)
    finally:
        mp.bn_momentum = saved
        mp.bn_unbiased = True


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, mp: ModelParams, extra: dict | None = None) -> None:
    meta = {"network": mp.config.to_dict()}
    if extra:
        meta.update(extra)
    ad.save_weights(path, mp.arrays(), meta)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    arrays, meta = ad.load_weights(path)
    if "network" not in meta:
        raise DataError(f"{path}: checkpoint lacks a network configuration")
    cfg = NetworkConfig.from_dict(meta["network"])
    return load_arrays(cfg, arrays), meta
