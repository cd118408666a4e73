"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--points 1024] [--repeat 5]

Inputs mirror one desk-scale forward pass: farthest point sampling and ball
queries on the sorted cloud, 3-NN interpolation lookups, batchnorm over the
grouped features and the scatter-add used by gather backward.  Every row
also checks that both backends return the same result.
"""
import argparse
import timeit

import numpy as np

from branchtopo import kernels


def cases(n, rng):
    coords = rng.random((n, 2))
    coords = coords[np.lexsort(coords.T[::-1])]
    k = max(n // 8, 1)
    centers = np.arange(0, n, max(n // k, 1))[:k].astype(np.int64)
    src = coords[:: 8].copy()
    feats = rng.normal(size=(k * 16, 64)).astype(np.float32)
    grad = rng.normal(size=feats.shape).astype(np.float32)
    gamma = np.ones(64, np.float32)
    beta = np.zeros(64, np.float32)
    idx = rng.integers(0, n, size=n * 3).astype(np.int64)
    vals = rng.normal(size=(n * 3, 32)).astype(np.float32)

    def bn_back(mod):
        _, xhat, _, _, inv = mod.bn_forward_train(feats, gamma, beta, 1e-5)
        return mod.bn_backward(grad, xhat, gamma, inv, True)

    def scatter(mod):
        out = np.zeros((n, 32), np.float32)
        mod.scatter_add_rows(out, idx, vals)
        return out

    return [
        (f"fps k={k}", lambda m: m.fps_sorted(coords, k)),
        (f"ball_query r=0.032 max_k=16", lambda m: m.ball_query_sorted(coords, centers, 0.032 ** 2, 16)),
        (f"knn k=3 ({len(src)} -> {n})", lambda m: m.knn_sorted(src, coords, 3)),
        (f"bn_forward {feats.shape}", lambda m: m.bn_forward_train(feats, gamma, beta, 1e-5)),
        ("bn_backward", bn_back),
        (f"scatter_add {vals.shape}", scatter),
    ]


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-5, atol=1e-6)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    fast = kernels.compiled_backend
    slow = kernels.python_backend
    if fast is None:
        raise SystemExit("compiled extension not available; build with `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':36s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  match")
    for name, fn in cases(args.points, rng):
        t_py = min(timeit.repeat(lambda: fn(slow), number=1, repeat=args.repeat)) * 1e3
        t_c = min(timeit.repeat(lambda: fn(fast), number=1, repeat=args.repeat)) * 1e3
        ok = same(fn(slow), fn(fast))
        print(f"{name:36s} {t_py:10.3f} {t_c:10.3f} {t_py / t_c:7.1f}x  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
