"""Pure numpy implementations of the hot point kernels.

Every kernel expects coordinates already sorted into lexicographic order, so
"first maximal / first minimal index" doubles as the lexicographic tie-break.
Distances are accumulated axis by axis in the same order as the compiled
kernels so both backends make identical discrete decisions.
"""
import numpy as np


def _sqdist_to(coords, point):
    d = np.zeros(coords.shape[0], dtype=np.float64)
    for j in range(coords.shape[1]):
        diff = coords[:, j] - point[j]
        d += diff * diff
    return d


def fps_sorted(coords, k):
    n = coords.shape[0]
    out = np.empty(k, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = 0
    for i in range(k):
        out[i] = cur
        np.minimum(mind, _sqdist_to(coords, coords[cur]), out=mind)
        cur = int(np.argmax(mind))
    return out


def ball_query_sorted(coords, centers, r2, max_k):
    m = centers.shape[0]
    out = np.empty((m, max_k), dtype=np.int64)
    for i in range(m):
        c = centers[i]
        d = _sqdist_to(coords, coords[c])
        cand = np.flatnonzero(d <= r2)
        cand = cand[cand != c]
        order = np.argsort(d[cand], kind="stable")[: max_k - 1]
        row = np.full(max_k, c, dtype=np.int64)
        row[1:1 + order.size] = cand[order]
        out[i] = row
    return out


def knn_sorted(src, dst, k):
    m = dst.shape[0]
    k = min(k, src.shape[0])
    idx = np.empty((m, k), dtype=np.int64)
    d2 = np.empty((m, k), dtype=np.float64)
    for i in range(m):
        d = _sqdist_to(src, dst[i])
        order = np.argsort(d, kind="stable")[:k]
        idx[i] = order
        d2[i] = d[order]
    return idx, d2


def scatter_add_rows(out, idx, vals):
    np.add.at(out, idx, vals)
    return out


def bn_forward_train(x, gamma, beta, eps):
    mean = x.mean(axis=0, dtype=np.float64)
    xc = x - mean
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).astype(x.dtype)
    out = (xhat * gamma + beta).astype(x.dtype)
    return out, xhat, mean, var, inv


def bn_backward(g, xhat, gamma, inv, train):
    m = g.shape[0]
    dbeta = g.sum(axis=0, dtype=np.float64)
    dgamma = (g * xhat).sum(axis=0, dtype=np.float64)
    if train:
        dx = (gamma * inv) * (g - dbeta / m - xhat * (dgamma / m))
    else:
        dx = g * (gamma * inv)
    return dx.astype(g.dtype), dgamma.astype(g.dtype), dbeta.astype(g.dtype)
