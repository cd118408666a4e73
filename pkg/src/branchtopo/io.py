"""Point-cloud CSV, junction side files and the dataset manifest."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import PADDING, LabeledPointCloud

AXES = ("x", "y", "z")
JUNCTION_SUFFIX = ".junctions.csv"
MANIFEST_NAME = "manifest.jsonl"


def fmt(v: float) -> str:
    # shortest repr that round-trips; stable across runs
    return repr(float(v))


def _coord_header(dim):
    if dim not in (2, 3):
        raise DataError(f"unsupported dimension {dim}")
    return list(AXES[:dim])


@dataclass
class PointTable:
    """Columns of a point CSV.  ``instance``/``cls`` are None for bare clouds."""

    coords: np.ndarray
    instance: np.ndarray | None = None
    cls: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


def write_points(path, coords, instance=None, cls=None, extra: dict | None = None) -> None:
    coords = np.asarray(coords, dtype=np.float64)
    header = _coord_header(coords.shape[1])
    cols = [coords[:, j] for j in range(coords.shape[1])]
    if instance is not None:
        header += ["instance", "class"]
        cols += [np.asarray(instance, dtype=np.int64), np.asarray(cls, dtype=np.int64)]
    for name, v in (extra or {}).items():
        header.append(name)
        cols.append(np.asarray(v))
    n_coord = coords.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(coords.shape[0]):
            vals = [fmt(c[i]) if j < n_coord else str(int(c[i])) for j, c in enumerate(cols)]
            fh.write(",".join(vals) + "\n")


def read_points(path) -> PointTable:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from e
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    dim = 3 if "z" in header else 2
    need = list(AXES[:dim])
    if header[:dim] != need:
        raise DataError(f"{path}: header must start with {','.join(need)}")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no points")
    try:
        table = np.array(body, dtype=np.float64)
    except ValueError as e:
        raise DataError(f"{path}: non-numeric or ragged rows") from e
    if table.ndim != 2 or table.shape[1] != len(header):
        raise DataError(f"{path}: rows do not match the header")
    if not np.isfinite(table).all():
        raise DataError(f"{path}: non-finite values")
    col = {h: table[:, i] for i, h in enumerate(header)}
    out = PointTable(table[:, :dim].copy())
    if "instance" in col and "class" in col:
        out.instance = col["instance"].astype(np.int64)
        out.cls = col["class"].astype(np.int64)
        if np.any((out.cls < 0) | (out.cls > 2)):
            raise DataError(f"{path}: class outside {{0,1,2}}")
    out.extra = {h: v.astype(np.int64) for h, v in col.items()
                 if h not in AXES and h not in ("instance", "class")}
    return out


def write_cloud(path, cloud: LabeledPointCloud) -> None:
    write_points(path, cloud.coords, cloud.instance, cloud.cls)
    write_centers(junction_path(path), {"junction": cloud.junctions, "terminal": cloud.terminals})


def read_cloud(path) -> LabeledPointCloud:
    t = read_points(path)
    if t.instance is None:
        raise DataError(f"{path}: labeled cloud needs instance and class columns")
    jp = junction_path(path)
    centers = read_centers(jp) if jp.exists() else {}
    try:
        return LabeledPointCloud(t.coords, t.instance, t.cls,
                                 centers.get("junction"), centers.get("terminal"))
    except DataError as e:
        raise DataError(f"{path}: {e}") from e


def junction_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name[:-4] + JUNCTION_SUFFIX if p.name.endswith(".csv") else p.name + JUNCTION_SUFFIX)


def write_centers(path, groups: dict) -> None:
    """Side file of named center lists, e.g. junction and terminal coordinates."""
    groups = {k: np.asarray(v, dtype=np.float64) for k, v in groups.items()}
    dims = {v.shape[-1] for v in groups.values() if v.ndim == 2}
    dim = max(dims) if dims else 2
    with open(path, "w", newline="") as fh:
        fh.write(",".join(_coord_header(dim) + ["kind"]) + "\n")
        for kind, pts in groups.items():
            for p in pts.reshape(-1, dim):
                fh.write(",".join([fmt(v) for v in p] + [kind]) + "\n")


def read_centers(path) -> dict:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from e
    if not rows or rows[0][-1] != "kind":
        raise DataError(f"{path}: bad junction file header")
    dim = len(rows[0]) - 1
    out: dict = {}
    for r in rows[1:]:
        out.setdefault(r[-1], []).append([float(v) for v in r[:-1]])
    return {k: np.array(v, dtype=np.float64).reshape(-1, dim) for k, v in out.items()}


def write_manifest(path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    try:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e


def load_dataset(directory) -> tuple[list[dict], list[LabeledPointCloud]]:
    directory = Path(directory)
    records = read_manifest(directory / MANIFEST_NAME)
    if not records:
        raise DataError(f"{directory}: empty manifest")
    return records, [read_cloud(directory / r["file"]) for r in records]


def cloud_mask(cls) -> np.ndarray:
    return np.asarray(cls) != PADDING
