"""Synthetic branching structures: growth, rasterization, augmentation.

The pipeline is ``grow_tree -> rasterize -> augment -> finalize`` and is a
pure function of its configuration objects and integer seeds.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation

from .errors import DataError

log = logging.getLogger(__name__)

PADDING = 0
BRANCH = 1
ENDPOINT = 2

PAD_VALUE = -1.0
MAX_SAMPLE_SPACING = 0.5


@dataclass(frozen=True)
class GenConfig:
    dim: int = 2
    max_levels: int = 4
    p_trifurcation: float = 0.2
    start_angle_range: tuple[float, float] = (0.0, 90.0)  # degrees
    steps_mean: float = 20.0
    steps_sd: float = 8.0
    step_angle_sd_range: tuple[float, float] = (10.0, 60.0)  # degrees
    step_len_range: tuple[float, float] = (0.0, 1.0)  # sampled from (lo, hi]
    grid_size: int = 512
    fixed_length: bool = False
    fixed_levels: int | None = None
    endpoint_radius: float = 4.0  # grid units, applied before normalization

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.max_levels < 1:
            raise ValueError("max_levels must be >= 1")
        if self.fixed_levels is not None and self.fixed_levels < 0:
            raise ValueError("fixed_levels must be >= 0")
        if not 0.0 <= self.p_trifurcation <= 1.0:
            raise ValueError("p_trifurcation must lie in [0, 1]")
        if self.grid_size < 8:
            raise ValueError("grid_size must be >= 8")
        if self.steps_mean <= 0:
            raise ValueError("steps_mean must be > 0")
        lo, hi = self.step_len_range
        if not 0.0 <= lo < hi:
            raise ValueError("step_len_range must satisfy 0 <= lo < hi")
        if self.endpoint_radius <= 0:
            raise ValueError("endpoint_radius must be > 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> GenConfig:
        d = dict(d)
        for key in ("start_angle_range", "step_angle_sd_range", "step_len_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class AugConfig:
    jitter_sd: float = 3.0  # grid units
    dropout_p: float = 0.4
    n_points: int = 10_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.jitter_sd < 0:
            raise ValueError("jitter_sd must be >= 0")
        # p == 1 is accepted here so that augment() reports the empty cloud.
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValueError("dropout_p must lie in [0, 1]")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> AugConfig:
        return cls(**d)


@dataclass
class Branch:
    id: int
    parent_id: int | None
    polyline: np.ndarray  # (n, dim) control points
    level: int
    start_dir: np.ndarray
    end_dir: np.ndarray


@dataclass
class TreeStructure:
    dim: int
    branches: list[Branch]
    junctions: np.ndarray  # (J, dim)
    terminals: np.ndarray  # (T, dim)

    @property
    def n_branches(self) -> int:
        return len(self.branches)


def _empty(dim):
    return np.zeros((0, dim), dtype=np.float64)


@dataclass
class LabeledPointCloud:
    coords: np.ndarray  # (N, dim) float64
    instance: np.ndarray  # (N,) int64, -1 for padding
    cls: np.ndarray  # (N,) int64 in {PADDING, BRANCH, ENDPOINT}
    junctions: np.ndarray | None = None  # ground-truth junctions, same frame
    terminals: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.instance = np.asarray(self.instance, dtype=np.int64)
        self.cls = np.asarray(self.cls, dtype=np.int64)
        n, dim = self.coords.shape
        if self.instance.shape != (n,) or self.cls.shape != (n,):
            raise DataError("coords, instance and class lengths differ")
        if np.any((self.instance == -1) != (self.cls == PADDING)):
            raise DataError("instance == -1 must coincide with class == padding")
        if self.junctions is None:
            self.junctions = _empty(dim)
        if self.terminals is None:
            self.terminals = _empty(dim)

    def __len__(self):
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.cls != PADDING

    def n_instances(self) -> int:
        return int(np.unique(self.instance[self.instance >= 0]).size)

    def subset(self, rows: np.ndarray) -> LabeledPointCloud:
        return LabeledPointCloud(
            self.coords[rows], self.instance[rows], self.cls[rows],
            self.junctions, self.terminals, dict(self.meta),
        )


# ---------------------------------------------------------------------------
# growth


def _direction(theta, phi, dim):
    if dim == 2:
        return np.array([math.cos(phi), math.sin(phi)])
    return np.array([
        math.cos(theta) * math.cos(phi),
        math.cos(theta) * math.sin(phi),
        math.sin(theta),
    ])


def _angles(vec):
    """(theta, phi) of a unit vector; theta is elevation from the xy plane."""
    if vec.shape[0] == 2:
        return 0.0, math.atan2(vec[1], vec[0])
    z = float(np.clip(vec[2], -1.0, 1.0))
    return math.asin(z), math.atan2(vec[1], vec[0])


def _perpendicular_basis(d):
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return u, v


def _child_directions(end_dir, n_children, cfg, rng):
    lo, hi = np.radians(cfg.start_angle_range)
    spread = rng.uniform(lo, hi, size=n_children)
    if cfg.dim == 2:
        theta, phi = _angles(end_dir)
        first_sign = 1.0 if rng.random() < 0.5 else -1.0
        signs = first_sign * np.array([(-1.0) ** k for k in range(n_children)])
        return [(0.0, phi + s * a) for s, a in zip(signs, spread)]
    u, v = _perpendicular_basis(end_dir)
    psi0 = rng.uniform(0.0, 2.0 * math.pi)
    out = []
    for k, a in enumerate(spread):
        psi = psi0 + 2.0 * math.pi * k / n_children
        d = math.cos(a) * end_dir + math.sin(a) * (math.cos(psi) * u + math.sin(psi) * v)
        out.append(_angles(d / np.linalg.norm(d)))
    return out


def _grow_branch(start, theta, phi, cfg, rng, branch_id):
    if cfg.fixed_length:
        n_steps = max(2, int(round(cfg.steps_mean)))
    else:
        raw = int(round(rng.normal(cfg.steps_mean, cfg.steps_sd)))
        n_steps = max(2, raw)
        if raw < 2:
            log.debug("branch %d: step count %d clamped to 2", branch_id, raw)
    sd = math.radians(rng.uniform(*cfg.step_angle_sd_range))
    lo, hi = cfg.step_len_range
    pts = [np.asarray(start, dtype=np.float64)]
    start_dir = _direction(theta, phi, cfg.dim)
    d = start_dir
    for k in range(n_steps):
        if k > 0:
            phi = phi + rng.normal(0.0, sd)
            if cfg.dim == 3:
                theta = theta + rng.normal(0.0, sd)
            d = _direction(theta, phi, cfg.dim)
        if cfg.fixed_length:
            step = 0.5 * (lo + hi)
        else:
            step = lo + (hi - lo) * (1.0 - rng.random())  # (lo, hi]
        pts.append(pts[-1] + step * d)
    return np.array(pts), start_dir, d


def grow_tree(cfg: GenConfig, seed: int) -> TreeStructure:
    """Grow a random tree by recursive branching from the origin."""
    rng = np.random.default_rng(seed)
    if cfg.fixed_levels is not None:
        levels = cfg.fixed_levels
    else:
        levels = int(rng.integers(1, cfg.max_levels + 1))

    branches: list[Branch] = []
    # breadth-first so branch ids come out in level order
    queue = [(None, np.zeros(cfg.dim), 0.0, 0.0, 0)]
    while queue:
        parent_id, start, theta, phi, level = queue.pop(0)
        bid = len(branches)
        poly, start_dir, end_dir = _grow_branch(start, theta, phi, cfg, rng, bid)
        branches.append(Branch(bid, parent_id, poly, level, start_dir, end_dir))
        if level < levels:
            n_children = 3 if rng.random() < cfg.p_trifurcation else 2
            for ctheta, cphi in _child_directions(end_dir, n_children, cfg, rng):
                queue.append((bid, poly[-1].copy(), ctheta, cphi, level + 1))

    has_child = {b.parent_id for b in branches if b.parent_id is not None}
    junctions = [b.polyline[-1] for b in branches if b.id in has_child]
    terminals = [branches[0].polyline[0]]
    terminals += [b.polyline[-1] for b in branches if b.id not in has_child]
    return TreeStructure(
        dim=cfg.dim,
        branches=branches,
        junctions=np.array(junctions).reshape(-1, cfg.dim),
        terminals=np.array(terminals).reshape(-1, cfg.dim),
    )


# ---------------------------------------------------------------------------
# rasterization


def _branch_spline(branch: Branch) -> tuple[CubicSpline, float]:
    pts = branch.polyline
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])  # repeated control points carry no chord
    pts, seg = pts[keep], seg[seg > 0]
    if len(pts) < 2:
        p0 = pts[0]
        return (lambda t: np.broadcast_to(p0, (np.size(t), p0.size)).copy()), 0.0
    t = np.concatenate([[0.0], np.cumsum(seg)])
    spline = CubicSpline(t, pts, bc_type=((1, branch.start_dir), (1, branch.end_dir)))
    return spline, float(t[-1])


def _random_rotation(dim, rng):
    if dim == 2:
        a = rng.uniform(0.0, 2.0 * math.pi)
        return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return Rotation.random(random_state=rng).as_matrix()


def rasterize(tree: TreeStructure, cfg: GenConfig, seed: int) -> LabeledPointCloud:
    """Sample the tree's splines onto the integer grid with labels."""
    rng = np.random.default_rng(seed)
    rot = _random_rotation(tree.dim, rng)
    splines = [_branch_spline(b) for b in tree.branches]
    g = cfg.grid_size - 1

    # samples per unit of chord length; refined until spacing <= 0.5 grid units
    density = 8.0
    while True:
        samples = []
        for spline, length in splines:
            n = max(2, int(math.ceil(length * density)) + 1)
            samples.append(spline(np.linspace(0.0, length, n)) @ rot.T)
        allpts = np.concatenate(samples)
        lo = allpts.min(axis=0)
        ext = allpts.max(axis=0) - lo
        extent = float(ext.max())
        if extent <= 0.0:
            raise DataError("degenerate structure")
        scale = g / extent
        spacing = max(
            float(np.linalg.norm(np.diff(s, axis=0), axis=1).max()) for s in samples
        ) * scale
        if spacing <= MAX_SAMPLE_SPACING * 0.9:
            break
        density *= 2.0 * spacing / MAX_SAMPLE_SPACING

    offset = 0.5 * (g - ext * scale)

    def to_grid(x):
        return (np.asarray(x).reshape(-1, tree.dim) @ rot.T - lo) * scale + offset

    grid = np.clip(np.rint((allpts - lo) * scale + offset), 0, g)
    inst = np.concatenate([
        np.full(len(s), b.id, dtype=np.int64) for s, b in zip(samples, tree.branches)
    ])
    _, first = np.unique(grid, axis=0, return_index=True)
    keep = np.sort(first)
    grid, inst = grid[keep], inst[keep]

    junctions = to_grid(tree.junctions)
    terminals = to_grid(tree.terminals)
    ends = np.concatenate([junctions, terminals])
    d2 = ((grid[:, None, :] - ends[None, :, :]) ** 2).sum(axis=-1)
    near = (d2 <= cfg.endpoint_radius ** 2).any(axis=1)
    cls = np.where(near, ENDPOINT, BRANCH).astype(np.int64)
    return LabeledPointCloud(grid, inst, cls, junctions, terminals)


# ---------------------------------------------------------------------------
# augmentation and normalization


def augment(cloud: LabeledPointCloud, aug: AugConfig) -> LabeledPointCloud:
    """Gaussian jitter on every coordinate, then independent point dropout."""
    if np.any(cloud.cls == PADDING):
        raise DataError("augment expects a cloud without padding")
    rng = np.random.default_rng(aug.rng_seed)
    noise = rng.standard_normal(cloud.coords.shape)
    coords = cloud.coords + aug.jitter_sd * noise if aug.jitter_sd > 0 else cloud.coords.copy()
    keep = rng.random(len(cloud)) >= aug.dropout_p
    if not keep.any():
        raise DataError("empty cloud after dropout")
    return LabeledPointCloud(
        coords[keep], cloud.instance[keep], cloud.cls[keep],
        cloud.junctions, cloud.terminals, dict(cloud.meta),
    )


def unit_scale(coords: np.ndarray) -> tuple[np.ndarray, float]:
    """Origin at the minimum corner, isotropic scale to unit largest extent."""
    lo = coords.min(axis=0)
    extent = float((coords.max(axis=0) - lo).max())
    if extent <= 0.0:
        raise DataError("degenerate structure")
    return lo, extent


def finalize(cloud: LabeledPointCloud, n_points: int, seed: int) -> LabeledPointCloud:
    """Normalize to unit width, pad to ``n_points`` and shuffle rows."""
    n = len(cloud)
    if n > n_points:
        raise DataError(f"cloud exceeds capacity ({n} > {n_points})")
    if n < 1:
        raise DataError("empty cloud")
    lo, extent = unit_scale(cloud.coords)
    coords = (cloud.coords - lo) / extent
    n_pad = n_points - n
    coords = np.concatenate([coords, np.full((n_pad, cloud.dim), PAD_VALUE)])
    inst = np.concatenate([cloud.instance, np.full(n_pad, -1, dtype=np.int64)])
    cls = np.concatenate([cloud.cls, np.full(n_pad, PADDING, dtype=np.int64)])
    perm = np.random.default_rng(seed).permutation(n_points)
    return LabeledPointCloud(
        coords[perm], inst[perm], cls[perm],
        (cloud.junctions - lo) / extent, (cloud.terminals - lo) / extent,
        dict(cloud.meta),
    )


# ---------------------------------------------------------------------------
# full pipeline


def stage_seeds(seed: int, n: int = 4) -> list[int]:
    """Independent integer seeds for the pipeline stages."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def structure_seed(seed: int, index: int) -> int:
    """Seed for the ``index``-th structure of a dataset drawn from ``seed``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def make_sample(gen: GenConfig, aug: AugConfig, seed: int) -> tuple[LabeledPointCloud, TreeStructure]:
    """Run generate -> rasterize -> augment -> finalize for one structure.

    Clouds larger than ``aug.n_points`` after dropout are randomly subsampled
    (without replacement) before finalization; the number of discarded points
    is recorded in ``cloud.meta["subsampled"]``.
    """
    s_grow, s_rast, s_aug, s_fin = stage_seeds(seed)
    tree = grow_tree(gen, s_grow)
    cloud = rasterize(tree, gen, s_rast)
    cloud = augment(cloud, dataclasses.replace(aug, rng_seed=s_aug))
    dropped = 0
    if len(cloud) > aug.n_points:
        rng = np.random.default_rng(s_fin + 1)
        rows = np.sort(rng.choice(len(cloud), size=aug.n_points, replace=False))
        dropped = len(cloud) - aug.n_points
        cloud = cloud.subset(rows)
    out = finalize(cloud, aug.n_points, s_fin)
    out.meta["subsampled"] = dropped
    out.meta["n_branches"] = tree.n_branches
    return out, tree
