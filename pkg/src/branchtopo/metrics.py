"""Instance and junction metrics: SBD, DiC and the cluster Dice score."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricReport:
    sbd: float
    dic: float
    ds_c: float
    tp: int
    fp: int
    fn: int
    vacuous: bool = False  # no predicted and no true junctions


def _contingency(a, b):
    la = np.unique(a[a >= 0])
    lb = np.unique(b[b >= 0])
    ia = np.searchsorted(la, a)
    ib = np.searchsorted(lb, b)
    both = (a >= 0) & (b >= 0)
    table = np.zeros((la.size, lb.size), dtype=np.int64)
    np.add.at(table, (ia[both], ib[both]), 1)
    size_a = np.bincount(ia[a >= 0], minlength=la.size)
    size_b = np.bincount(ib[b >= 0], minlength=lb.size)
    return table, size_a, size_b


def best_dice(a, b) -> float:
    """Mean over labels of ``a`` of the best Dice overlap with a label of ``b``."""
    table, sa, sb = _contingency(np.asarray(a), np.asarray(b))
    if table.shape[0] == 0 or table.shape[1] == 0:
        return 0.0
    dice = 2.0 * table / (sa[:, None] + sb[None, :])
    return float(dice.max(axis=1).mean())


def sbd(pred_labels, gt_labels) -> float:
    """Symmetric best Dice in [0, 100].  Label -1 marks an unlabeled point."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ValueError("sbd: label arrays differ in length")
    return 100.0 * min(best_dice(pred_labels, gt_labels), best_dice(gt_labels, pred_labels))


def dic(pred_counts, gt_counts) -> float:
    pred_counts = np.asarray(pred_counts, dtype=np.float64)
    gt_counts = np.asarray(gt_counts, dtype=np.float64)
    if pred_counts.size == 0:
        raise ValueError("dic: empty count lists")
    if pred_counts.shape != gt_counts.shape:
        raise ValueError("dic: count lists differ in length")
    return float(np.abs(pred_counts - gt_counts).mean())


def match_centers(pred, gt, match_radius: float) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of closest (pred, gt) pairs within the radius."""
    if len(pred) == 0 or len(gt) == 0:
        return []
    pred = np.asarray(pred, dtype=np.float64).reshape(len(pred), -1)
    gt = np.asarray(gt, dtype=np.float64).reshape(len(gt), -1)
    d = np.sqrt(((pred[:, None, :] - gt[None, :, :]) ** 2).sum(-1))
    pi, gi = np.nonzero(d <= match_radius)
    order = np.lexsort((gi, pi, d[pi, gi]))
    used_p, used_g, pairs = set(), set(), []
    for k in order:
        p, g = int(pi[k]), int(gi[k])
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        pairs.append((p, g))
    return pairs


def ds_c(pred_centers, gt_centers, match_radius: float = 0.03) -> dict:
    """Cluster Dice score ``100 * 2tp / (2tp + fp + fn)`` with greedy matching.

    Both sides empty counts as a vacuous 100 and is flagged.
    """
    if match_radius <= 0:
        raise ValueError("match_radius must be > 0")
    n_pred, n_gt = len(pred_centers), len(gt_centers)
    tp = len(match_centers(pred_centers, gt_centers, match_radius))
    fp, fn = n_pred - tp, n_gt - tp
    if n_pred == 0 and n_gt == 0:
        return {"ds_c": 100.0, "tp": 0, "fp": 0, "fn": 0, "vacuous": True}
    return {"ds_c": 100.0 * 2 * tp / (2 * tp + fp + fn), "tp": tp, "fp": fp, "fn": fn,
            "vacuous": False}


def structure_report(pred_labels, gt_labels, pred_centers, gt_centers,
                     match_radius: float = 0.03) -> MetricReport:
    """All three metrics for one structure (DiC as its |count difference|)."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    n_pred = np.unique(pred_labels[pred_labels >= 0]).size
    n_gt = np.unique(gt_labels[gt_labels >= 0]).size
    d = ds_c(pred_centers, gt_centers, match_radius)
    return MetricReport(sbd(pred_labels, gt_labels), float(abs(n_pred - n_gt)), d["ds_c"],
                        d["tp"], d["fp"], d["fn"], d["vacuous"])
