"""Multi-task objective: point-wise cross-entropy plus a discriminative loss.

    total = ce + w * dlf
    dlf   = alpha * var + beta * dist + gamma * reg

``var`` pulls embeddings to within ``delta_v`` of their cluster mean, ``dist``
pushes cluster means at least ``2 * delta_d`` apart and ``reg`` is the mean
norm of the cluster means.  Padding points only enter the cross-entropy.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError


@dataclass(frozen=True)
class LossWeights:
    w: float = 0.05
    alpha: float = 1.5
    beta: float = 1.0
    gamma: float = 0.001
    delta_v: float = 0.7
    delta_d: float = 1.5

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if not self.delta_d > self.delta_v:
            raise ValueError("delta_d must exceed delta_v")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class LossReport:
    total: float
    ce: float
    dlf: float
    var_term: float
    dist_term: float
    reg_term: float
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def row(self) -> list[float]:
        return [self.total, self.ce, self.dlf, self.var_term, self.dist_term, self.reg_term]


def cross_entropy(logits: Tensor, classes) -> Tensor:
    """Mean over all points of ``-log softmax(logits)[class]``."""
    classes = np.asarray(classes, dtype=np.int64)
    if logits.shape[:-1] != classes.shape:
        raise DataError(f"cross_entropy: logits {logits.shape} vs classes {classes.shape}")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    np.put_along_axis(onehot, classes[..., None], 1.0, axis=-1)
    picked = (ad.log_softmax(logits) * onehot).sum(axis=-1)
    return -picked.mean()


def _zero(like):
    return Tensor(np.zeros((), dtype=like.dtype))


def discriminative_loss(embeddings: Tensor, instance, mask, lw: LossWeights) -> dict:
    """Discriminative loss terms for one point set.

    ``embeddings`` is (N, D); ``instance`` holds ids (any integers) and
    ``mask`` flags the points that take part.  Returns a dict of scalar
    Tensors ``dlf``, ``var``, ``dist``, ``reg``.
    """
    instance = np.asarray(instance)
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise DataError("no instances")
    ids, seg_rows = np.unique(instance[rows], return_inverse=True)
    c = ids.size
    seg = np.full(instance.shape[0], -1, dtype=np.int64)
    seg[rows] = seg_rows

    means = ad.segment_mean(embeddings, seg, c)
    x = ad.gather_rows(embeddings, rows)
    to_mean = ad.norm(ad.gather_rows(means, seg_rows) - x)
    pull = ad.square(ad.hinge(to_mean - lw.delta_v))
    var = ad.segment_mean(pull.reshape(-1, 1), seg_rows, c).mean()

    if c > 1:
        ia, ib = np.nonzero(~np.eye(c, dtype=bool))
        gap = ad.norm(ad.gather_rows(means, ia) - ad.gather_rows(means, ib))
        dist = ad.square(ad.hinge(2.0 * lw.delta_d - gap)).mean()
    else:
        dist = _zero(embeddings)

    reg = ad.norm(means).mean()
    dlf = lw.alpha * var + lw.beta * dist + lw.gamma * reg
    return {"dlf": dlf, "var": var, "dist": dist, "reg": reg}


def combined_loss(embeddings: Tensor, logits: Tensor, classes, instance, mask,
                  lw: LossWeights) -> LossReport:
    """Total loss over a batch.

    Inputs are batched: embeddings (B, N, D), logits (B, N, 3) and integer
    arrays of shape (B, N).  Cross-entropy is averaged over all B*N points,
    the discriminative terms over the B point sets.
    """
    classes = np.asarray(classes)
    instance = np.asarray(instance)
    mask = np.asarray(mask, dtype=bool)
    if embeddings.ndim == 2:
        embeddings = embeddings.reshape((1,) + embeddings.shape)
        logits = logits.reshape((1,) + logits.shape)
        classes, instance, mask = classes[None], instance[None], mask[None]
    b = embeddings.shape[0]
    ce = cross_entropy(logits, classes)
    n = embeddings.shape[1]
    flat = embeddings.reshape(b * n, embeddings.shape[2])
    parts = {"dlf": [], "var": [], "dist": [], "reg": []}
    for i in range(b):
        emb_i = ad.gather_rows(flat, np.arange(i * n, (i + 1) * n))
        terms = discriminative_loss(emb_i, instance[i], mask[i], lw)
        for k in parts:
            parts[k].append(terms[k])
    avg = {k: _batch_mean(v) for k, v in parts.items()}
    total = ce + lw.w * avg["dlf"]
    return LossReport(
        total=float(total.data), ce=float(ce.data), dlf=float(avg["dlf"].data),
        var_term=float(avg["var"].data), dist_term=float(avg["dist"].data),
        reg_term=float(avg["reg"].data), tensor=total,
    )


def _batch_mean(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(terms))
