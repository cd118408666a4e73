"""Deterministic SVG scatter plots of predicted instances and junctions."""
from __future__ import annotations

import numpy as np

from .errors import DataError

# instance id -> colour, cycled
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173", "#3182bd",
    "#e6550d", "#31a354", "#756bb1", "#636363",
)
PROJECTIONS = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


def project(coords, plane: str | None):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[1] == 2:
        return coords
    if plane not in PROJECTIONS:
        raise ValueError("3-D points need a projection plane (xy, xz or yz)")
    return coords[:, PROJECTIONS[plane]]


def render_svg(coords, instance, centers=None, plane: str | None = None, size: int = 512,
               radius: float = 1.5, cross: float = 5.0) -> str:
    """Points coloured by instance (rows with instance < 0 are skipped), centers as crosses."""
    instance = np.asarray(instance)
    keep = instance >= 0
    if not keep.any():
        raise DataError("empty prediction: no labeled points to plot")
    pts = project(coords, plane)[keep]
    ids = instance[keep]
    ctr = np.zeros((0, 2)) if centers is None or len(centers) == 0 else project(centers, plane)
    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max()) or 1.0
    margin = 2 * cross
    s = (size - 2 * margin) / extent

    def xy(p):
        return margin + (p[0] - lo[0]) * s, size - margin - (p[1] - lo[1]) * s

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">']
    out.append('<g class="points" stroke="none">')
    for p, k in zip(pts, ids):
        cx, cy = xy(p)
        out.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="{radius}" '
                   f'fill="{PALETTE[int(k) % len(PALETTE)]}"/>')
    out.append("</g>")
    out.append('<g class="junctions" stroke="#000000" stroke-width="1.5" fill="none">')
    for p in ctr:
        cx, cy = xy(p)
        d = (f"M{cx - cross:.3f} {cy - cross:.3f} L{cx + cross:.3f} {cy + cross:.3f} "
             f"M{cx - cross:.3f} {cy + cross:.3f} L{cx + cross:.3f} {cy - cross:.3f}")
        out.append(f'<path class="cross" d="{d}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
