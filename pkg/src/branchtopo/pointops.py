"""Structural point-cloud primitives (non-differentiable).

All selection rules break ties by lexicographic coordinate order and then by
original row index, so results depend only on the coordinate multiset: for a
row permutation ``p``, ``fps(x[p])`` selects ``p^-1`` of what ``fps(x)``
selects.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

DIST_GUARD = 1e-8


def lex_order(coords: np.ndarray) -> np.ndarray:
    """Row order sorting by x, then y, (then z), then original index."""
    coords = np.asarray(coords)
    return np.lexsort(tuple(coords[:, j] for j in reversed(range(coords.shape[1]))))


def _sorted(coords):
    order = lex_order(coords)
    return order, np.ascontiguousarray(coords[order], dtype=np.float64)


def farthest_point_sample(coords: np.ndarray, k: int) -> np.ndarray:
    """Indices of ``k`` points chosen by farthest point sampling.

    The first pick is the lexicographically smallest row; every later pick
    maximizes the minimum distance to the points already chosen.
    """
    n = len(coords)
    if not 1 <= k <= n:
        raise ValueError(f"farthest_point_sample: need 1 <= k <= N, got k={k}, N={n}")
    order, sc = _sorted(coords)
    return order[kernels.fps_sorted(sc, int(k))]


@dataclass
class NeighborIndex:
    centroid_indices: np.ndarray  # (K,)
    neighbor_lists: np.ndarray  # (K, max_k); column 0 is the centroid itself
    radius: float

    @property
    def max_k(self) -> int:
        return self.neighbor_lists.shape[1]


def ball_query(coords: np.ndarray, centroids: np.ndarray, r: float, max_k: int) -> NeighborIndex:
    """Up to ``max_k`` nearest points within ``r`` of each centroid.

    ``centroids`` are row indices into ``coords``.  Neighbors are sorted by
    distance; underfull balls are filled by repeating the centroid index.
    """
    if r <= 0:
        raise ValueError("ball_query: radius must be > 0")
    if max_k < 1:
        raise ValueError("ball_query: max_k must be >= 1")
    centroids = np.asarray(centroids, dtype=np.int64)
    order, sc = _sorted(coords)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    nb = kernels.ball_query_sorted(sc, np.ascontiguousarray(rank[centroids]), float(r) ** 2, int(max_k))
    return NeighborIndex(centroids.copy(), order[nb], float(r))


def group_relative(coords: np.ndarray, feats: np.ndarray | None, nbr: NeighborIndex) -> np.ndarray:
    """Neighborhoods in centroid-relative frames, features appended."""
    coords = np.asarray(coords)
    rel = coords[nbr.neighbor_lists] - coords[nbr.centroid_indices][:, None, :]
    if feats is None or feats.shape[-1] == 0:
        return rel
    return np.concatenate([rel, np.asarray(feats)[nbr.neighbor_lists]], axis=-1)


def knn(src_coords: np.ndarray, dst_coords: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and squared distances of the ``k`` nearest sources per destination."""
    order, ss = _sorted(src_coords)
    dst = np.ascontiguousarray(dst_coords, dtype=np.float64)
    idx, d2 = kernels.knn_sorted(ss, dst, int(k))
    return order[idx], d2


def interpolation_weights(src_coords, dst_coords, k: int = 3):
    """Inverse-distance weights over the ``k`` nearest sources (rows sum to 1)."""
    idx, d2 = knn(src_coords, dst_coords, k)
    w = 1.0 / np.maximum(np.sqrt(d2), DIST_GUARD)
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def interpolate_features(src_coords, src_feats, dst_coords, k: int = 3) -> np.ndarray:
    if len(src_coords) < 1:
        raise ValueError("interpolate_features: need at least one source point")
    idx, w = interpolation_weights(src_coords, dst_coords, k)
    feats = np.asarray(src_feats)
    return (feats[idx] * w[..., None]).sum(axis=1)
