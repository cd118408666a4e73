"""Dataset generation, inference, evaluation and the perturbation sweep."""
from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io, pointops
from .cluster import extract_instances, localize_junctions, split_endpoints
from .errors import DataError
from .geometry import (PAD_VALUE, PADDING, AugConfig, GenConfig, LabeledPointCloud, make_sample,
                       structure_seed, unit_scale)
from .losses import LossWeights
from .metrics import MetricReport, structure_report
from .model import ModelParams, branchnet_forward

# Trained clusters sit within delta_v of their means with means 2*delta_d apart,
# so any flat kernel in [delta_v, 2*delta_d - delta_v] separates them; delta_d
# is the middle of that window and tolerates loosely converged embeddings.
DEFAULT_BANDWIDTH = LossWeights().delta_d
JUNCTION_BANDWIDTH = 0.02
MATCH_RADIUS = 0.03


# ---------------------------------------------------------------------------
# generate


def _sample(args):
    gen, aug, seed = args
    return make_sample(gen, aug, seed)[0]


def generate_dataset(out_dir, gen: GenConfig, aug: AugConfig, count: int, seed: int,
                     workers: int = 1) -> list[dict]:
    """Write ``count`` labeled clouds plus ``manifest.jsonl`` into ``out_dir``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create {out}: {e.strerror}") from e
    seeds = [structure_seed(seed, i) for i in range(count)]
    jobs = [(gen, aug, s) for s in seeds]
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            clouds = list(pool.map(_sample, jobs))
    else:
        clouds = [_sample(j) for j in jobs]
    records = []
    for i, (s, cloud) in enumerate(zip(seeds, clouds)):
        name = f"structure_{i:05d}.csv"
        try:
            io.write_cloud(out / name, cloud)
        except OSError as e:
            raise DataError(f"cannot write {out / name}: {e.strerror}") from e
        records.append({
            "file": name, "index": i, "seed": s, "dataset_seed": seed,
            "gen": gen.to_dict(), "aug": aug.to_dict(),
            "n_instances": cloud.n_instances(), "subsampled": cloud.meta.get("subsampled", 0),
        })
    io.write_manifest(out / io.MANIFEST_NAME, records)
    return records


# ---------------------------------------------------------------------------
# infer


@dataclass
class InferResult:
    coords: np.ndarray  # input frame, all rows
    instance: np.ndarray
    cls: np.ndarray
    sampled: np.ndarray  # 1 where the row went through the network
    junctions: np.ndarray  # input frame
    terminals: np.ndarray

    def write(self, path) -> None:
        io.write_points(path, self.coords, self.instance, self.cls, {"sampled": self.sampled})
        io.write_centers(io.junction_path(path),
                         {"junction": self.junctions, "terminal": self.terminals})


def infer_points(mp: ModelParams, coords, padding=None, seed: int = 0,
                 bandwidth: float = DEFAULT_BANDWIDTH,
                 junction_bandwidth: float = JUNCTION_BANDWIDTH,
                 split_radius: float = MATCH_RADIUS) -> InferResult:
    """Eval-mode prediction on an arbitrary cloud.

    Rows flagged in ``padding`` are passed through as padding.  Larger clouds
    are subsampled without replacement; rows left out inherit the labels of
    their nearest sampled neighbour.
    """
    cfg = mp.config
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != cfg.dim:
        raise DataError(f"dimension mismatch: model expects {cfg.dim}-D points, "
                        f"got {coords.shape[-1]}-D")
    m = coords.shape[0]
    padding = np.zeros(m, dtype=bool) if padding is None else np.asarray(padding, dtype=bool)
    data = np.flatnonzero(~padding)
    if data.size == 0:
        raise DataError("no data points")
    if data.size > cfg.n_points:
        chosen = np.sort(np.random.default_rng(seed).choice(data, cfg.n_points, replace=False))
    else:
        chosen = data
    lo, extent = unit_scale(coords[data])
    n_c = chosen.size
    x = np.full((cfg.n_points, cfg.dim), PAD_VALUE)
    x[:n_c] = (coords[chosen] - lo) / extent
    pred = branchnet_forward(x, mp, "eval")
    emb, logits = pred.embeddings[:n_c], pred.logits[:n_c]
    labels = extract_instances(emb, logits, bandwidth)
    classes = np.argmax(logits, axis=-1).astype(np.int64)
    classes[labels < 0] = PADDING
    centers = localize_junctions(logits, x[:n_c], junction_bandwidth)
    junc, term = split_endpoints(centers, x[:n_c], labels, split_radius)

    instance = np.full(m, -1, dtype=np.int64)
    cls = np.full(m, PADDING, dtype=np.int64)
    sampled = np.zeros(m, dtype=np.int64)
    instance[chosen], cls[chosen], sampled[chosen] = labels, classes, 1
    rest = np.setdiff1d(data, chosen)
    if rest.size:
        nn, _ = pointops.knn(coords[chosen], coords[rest], 1)
        instance[rest] = labels[nn[:, 0]]
        cls[rest] = classes[nn[:, 0]]
    return InferResult(coords, instance, cls, sampled, junc * extent + lo, term * extent + lo)


def infer_file(mp: ModelParams, path, seed: int = 0, **kw) -> InferResult:
    t = io.read_points(path)
    padding = None if t.cls is None else t.cls == PADDING
    return infer_points(mp, t.coords, padding, seed, **kw)


# ---------------------------------------------------------------------------
# evaluate

REPORT_HEADER = ("id", "sbd", "dic", "tp", "fp", "fn", "ds_c", "vacuous")


def _gt_centers(groups: dict, dim: int, centers: str):
    kinds = ("junction",) if centers == "junctions" else ("junction", "terminal")
    parts = [groups[k] for k in kinds if k in groups and len(groups[k])]
    return np.concatenate(parts) if parts else np.zeros((0, dim))


def score(pred_instance, pred_centers, cloud: LabeledPointCloud, centers: str = "junctions",
          match_radius: float = MATCH_RADIUS) -> MetricReport:
    """Metrics of one prediction against a labeled cloud (both in one frame)."""
    mask = cloud.mask
    gt = _gt_centers({"junction": cloud.junctions, "terminal": cloud.terminals}, cloud.dim, centers)
    return structure_report(np.asarray(pred_instance)[mask], cloud.instance[mask],
                            pred_centers, gt, match_radius)


def _file_list(directory: Path) -> list[str]:
    if (directory / io.MANIFEST_NAME).exists():
        return [r["file"] for r in io.read_manifest(directory / io.MANIFEST_NAME)]
    return sorted(p.name for p in directory.glob("*.csv") if not p.name.endswith(io.JUNCTION_SUFFIX))


def evaluate_dirs(pred_dir, gt_dir, centers: str = "junctions",
                  match_radius: float = MATCH_RADIUS) -> list[tuple]:
    """Per-structure rows followed by a ``mean`` and a ``pooled`` summary row."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gt_files = _file_list(gt_dir)
    if not gt_files:
        raise DataError(f"{gt_dir}: no point files")
    missing = [f for f in gt_files if not (pred_dir / f).exists()]
    if missing:
        raise DataError("no prediction for: " + ", ".join(missing))
    rows, reports = [], []
    for f in gt_files:
        cloud = io.read_cloud(gt_dir / f)
        pred = io.read_points(pred_dir / f)
        if pred.instance is None or pred.coords.shape != cloud.coords.shape:
            raise DataError(f"{f}: prediction rows do not align with ground truth")
        jp = io.junction_path(pred_dir / f)
        groups = io.read_centers(jp) if jp.exists() else {}
        pc = _gt_centers(groups, cloud.dim, centers)
        rep = score(pred.instance, pc, cloud, centers, match_radius)
        reports.append(rep)
        rows.append((Path(f).stem, rep.sbd, rep.dic, rep.tp, rep.fp, rep.fn, rep.ds_c, int(rep.vacuous)))
    return rows + summary_rows(reports)


def summary_rows(reports: list[MetricReport]) -> list[tuple]:
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    mean = lambda xs: float(np.mean(xs))  # noqa: E731
    sbd_m, dic_m = mean([r.sbd for r in reports]), mean([r.dic for r in reports])
    pooled = 100.0 if tp + fp + fn == 0 else 100.0 * 2 * tp / (2 * tp + fp + fn)
    return [("mean", sbd_m, dic_m, tp, fp, fn, mean([r.ds_c for r in reports]), 0),
            ("pooled", sbd_m, dic_m, tp, fp, fn, pooled, int(tp + fp + fn == 0))]


def write_report(path, rows, header=REPORT_HEADER) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(io.fmt(v) if isinstance(v, float) else str(v) for v in r) + "\n")


# ---------------------------------------------------------------------------
# sweep

SWEEP_HEADER = ("dim", "axis", "level", "metric", "value")
SWEEP_METRICS = ("SBD", "DiC", "DS_C")
BRANCH_LEVELS = (1, 2, 3, 4)
DROPOUT_LEVELS = (30, 45, 60, 75)  # percent
JITTER_LEVELS = (1, 2, 3, 4)  # grid units
SWEEP_FIXED_LEVELS = 3


def sweep_settings(gen: GenConfig, aug: AugConfig):
    """(axis, level label, GenConfig, AugConfig) for every cell of the grid."""
    bif = dataclasses.replace(gen, p_trifurcation=0.0)
    out = []
    for lv in BRANCH_LEVELS:
        out.append(("branches", 2 ** (lv + 1) - 1, dataclasses.replace(bif, fixed_levels=lv), aug))
    fixed = dataclasses.replace(bif, fixed_levels=SWEEP_FIXED_LEVELS)
    for p in DROPOUT_LEVELS:
        out.append(("dropout", p, fixed, dataclasses.replace(aug, dropout_p=p / 100.0, jitter_sd=0.0)))
    for j in JITTER_LEVELS:
        out.append(("jitter", j, fixed, dataclasses.replace(aug, jitter_sd=float(j), dropout_p=0.0)))
    return out


def sweep(mp: ModelParams, gen: GenConfig, aug: AugConfig, count: int, seed: int,
          centers: str = "junctions") -> list[tuple]:
    """Regenerate test sets along the branch, dropout and jitter axes and score them."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rows = []
    for ai, (axis, level, g, a) in enumerate(sweep_settings(gen, aug)):
        reports = []
        for i in range(count):
            cloud = make_sample(g, a, structure_seed(seed, ai * count + i))[0]
            res = infer_points(mp, cloud.coords, ~cloud.mask, seed=i)
            pc = res.junctions if centers == "junctions" else np.concatenate([res.junctions, res.terminals])
            reports.append(score(res.instance, pc, cloud, centers))
        s = summary_rows(reports)[0]
        for name, value in zip(SWEEP_METRICS, (s[1], s[2], s[6])):
            rows.append((g.dim, axis, level, name, value))
    return rows


__all__ = ["generate_dataset", "infer_points", "infer_file", "InferResult", "evaluate_dirs",
           "score", "summary_rows", "write_report", "sweep", "sweep_settings"]
