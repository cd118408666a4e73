"""Flat-kernel mean-shift and the post-processing built on it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ENDPOINT, PADDING


@dataclass
class ClusterResult:
    centers: np.ndarray  # (C, D)
    assignment: np.ndarray  # (M,) center index per input point
    support: np.ndarray  # (C,) points within bandwidth of each center
    n_iter: int = 0

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]


def _sqdists(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def _bin_seeds(points, bin_size):
    """First member of every occupied grid cell of side ``bin_size``."""
    keys = np.floor(points / bin_size).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def flat_shift(x, points, bandwidth):
    """One mean-shift step: mean of ``points`` within ``bandwidth`` of each row of ``x``."""
    within = _sqdists(x, points) <= bandwidth * bandwidth
    counts = within.sum(1)
    means = (within.astype(points.dtype) @ points) / np.maximum(counts, 1)[:, None]
    return np.where(counts[:, None] > 0, means, x), counts


def mean_shift(points, bandwidth: float, tol: float | None = None, max_iter: int = 300) -> ClusterResult:
    """Mode seeking with a flat kernel, seeded from a ``bandwidth/2`` grid.

    Each seed moves to the mean of the points within ``bandwidth`` until the
    step is shorter than ``tol`` (default ``1e-3 * bandwidth``); the returned
    centers are the last positions whose shift was below ``tol``.  Modes
    closer than ``bandwidth/2`` are merged, keeping the better supported one
    (ties by lexicographic order).  Every point is assigned to its nearest
    center.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    if tol is None:
        tol = 1e-3 * bandwidth
    if points.shape[0] == 0:
        return ClusterResult(np.zeros((0, points.shape[1])), np.zeros(0, dtype=np.int64),
                             np.zeros(0, dtype=np.int64))

    x = _bin_seeds(points, bandwidth / 2.0)
    active = np.ones(len(x), dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        new, _ = flat_shift(x[idx], points, bandwidth)
        step = np.sqrt(((new - x[idx]) ** 2).sum(1))
        moving = step >= tol
        x[idx[moving]] = new[moving]
        active[idx[~moving]] = False

    support = (_sqdists(x, points) <= bandwidth * bandwidth).sum(1)
    order = np.lexsort(tuple(x[:, j] for j in reversed(range(x.shape[1]))) + (-support,))
    kept = []
    for i in order:
        if all(np.sum((x[i] - x[j]) ** 2) >= (bandwidth / 2.0) ** 2 for j in kept):
            kept.append(i)
    centers = x[kept]
    assignment = np.argmin(_sqdists(points, centers), axis=1)
    return ClusterResult(centers, assignment.astype(np.int64), support[kept], it)


def extract_instances(embeddings, logits, bandwidth: float = 1.5) -> np.ndarray:
    """Instance label per point; points predicted as padding get -1."""
    embeddings = np.asarray(embeddings)
    keep = np.argmax(logits, axis=-1) != PADDING
    labels = np.full(embeddings.shape[0], -1, dtype=np.int64)
    if keep.any():
        labels[keep] = mean_shift(embeddings[keep], bandwidth).assignment
    return labels


def localize_junctions(logits, coords, bandwidth: float = 0.02) -> np.ndarray:
    """Centers of the clusters of points predicted as end-point class."""
    coords = np.asarray(coords, dtype=np.float64)
    sel = np.argmax(logits, axis=-1) == ENDPOINT
    if not sel.any():
        return np.zeros((0, coords.shape[1]))
    return mean_shift(coords[sel], bandwidth).centers


def split_endpoints(centers, coords, labels, radius: float = 0.03, min_branches: int = 3):
    """Separate end-point clusters into junctions and terminal tips.

    A junction joins a parent branch to two or more children, so a center is
    kept as a junction when points of at least ``min_branches`` distinct
    predicted instances lie within ``radius`` of it.  Tips touch one branch,
    or two when they end next to a neighbouring one.
    """
    coords = np.asarray(coords, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, coords.shape[1])
    labels = np.asarray(labels)
    is_junction = np.zeros(len(centers), dtype=bool)
    valid = labels >= 0
    for i, c in enumerate(centers):
        near = valid & (((coords - c) ** 2).sum(1) <= radius * radius)
        is_junction[i] = np.unique(labels[near]).size >= min_branches
    return centers[is_junction], centers[~is_junction]
