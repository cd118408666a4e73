"""Independent reference implementations used as test oracles.

Plain Python loops over lists; nothing here shares code with the package.
"""
import itertools
import math


def _dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def dlf_bruteforce(emb, instance, mask, alpha=1.5, beta=1.0, gamma=0.001, dv=0.7, dd=1.5):
    """Returns (dlf, var, dist, reg) by direct summation."""
    groups = {}
    for e, k, m in zip(emb, instance, mask):
        if m:
            groups.setdefault(int(k), []).append([float(v) for v in e])
    keys = sorted(groups)
    c = len(keys)
    means = []
    for k in keys:
        pts = groups[k]
        means.append([sum(p[j] for p in pts) / len(pts) for j in range(len(pts[0]))])
    var = 0.0
    for mu, k in zip(means, keys):
        s = 0.0
        for p in groups[k]:
            s += max(_dist(mu, p) - dv, 0.0) ** 2
        var += s / len(groups[k])
    var /= c
    dist = 0.0
    if c > 1:
        for a in range(c):
            for b in range(c):
                if a != b:
                    dist += max(2 * dd - _dist(means[a], means[b]), 0.0) ** 2
        dist /= c * (c - 1)
    reg = sum(math.sqrt(sum(v * v for v in mu)) for mu in means) / c
    return alpha * var + beta * dist + gamma * reg, var, dist, reg


def cross_entropy_naive(logits, classes):
    tot = 0.0
    for row, k in zip(logits, classes):
        z = [math.exp(v) for v in row]
        tot -= math.log(z[int(k)] / sum(z))
    return tot / len(classes)


def best_matching_size(pred, gt, radius):
    """Maximum number of disjoint pairs within ``radius`` by exhaustive search."""
    pred, gt = list(pred), list(gt)
    if len(pred) > len(gt):
        pred, gt = gt, pred
    best = 0
    for perm in itertools.permutations(range(len(gt)), len(pred)):
        ok = sum(_dist(pred[i], gt[j]) <= radius for i, j in enumerate(perm))
        best = max(best, ok)
    return best
