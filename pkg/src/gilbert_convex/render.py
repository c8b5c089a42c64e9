"""Static output: SVG pictures of a solved measure and a CSV dump of its values."""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .grid import GridSpec, TerminalSet
from .trees import EmbeddedTree

# a few anchors of a perceptually ordered dark-to-light ramp
_RAMP = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=float)

CELL = 16
MARGIN = 20


def color(t: float) -> str:
    t = min(max(float(t), 0.0), 1.0) * (len(_RAMP) - 1)
    k = min(int(t), len(_RAMP) - 2)
    rgb = _RAMP[k] + (t - k) * (_RAMP[k + 1] - _RAMP[k])
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def _plane(grid: GridSpec) -> tuple[int, int]:
    if grid.ndim == 3:
        raise ValueError("only 1-D and 2-D grids can be rendered")
    return (grid.dims[0], grid.dims[1] if grid.ndim == 2 else 1)


def _to_svg(grid: GridSpec, point, height: int) -> tuple[float, float]:
    idx = (np.asarray(point, dtype=float) - np.asarray(grid.origin)) / grid.spacing
    i = idx[0]
    j = idx[1] if grid.ndim == 2 else 0.0
    return MARGIN + (i + 0.5) * CELL, MARGIN + (height - j - 0.5) * CELL


def render_svg(grid: GridSpec, m, terminals: TerminalSet, style: str = "heatmap",
               tree: EmbeddedTree | None = None, log_scale: bool = True) -> str:
    """Heatmap of ``m`` (axis 0 to the right, axis 1 up) with terminal markers.

    ``style="network"`` dims the heatmap and draws ``tree`` on top.
    """
    if style not in ("heatmap", "network"):
        raise ValueError(f"unknown style {style!r}")
    nx, ny = _plane(grid)
    mv = np.asarray(m, dtype=float).reshape(nx, ny)
    if log_scale:
        floor = mv.max() * 1e-6
        shade = np.log10(np.maximum(mv, floor) / floor) / 6.0
    else:
        shade = mv / mv.max()
    width, height = nx * CELL + 2 * MARGIN, ny * CELL + 2 * MARGIN
    opacity = 1.0 if style == "heatmap" else 0.35
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<g opacity="{opacity}">']
    for i in range(nx):
        for j in range(ny):
            x, y = MARGIN + i * CELL, MARGIN + (ny - 1 - j) * CELL
            out.append(f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                       f'fill="{color(shade[i, j])}"/>')
    out.append("</g>")
    if style == "network" and tree is not None:
        out.append('<g stroke="#d62728" stroke-width="3" stroke-linecap="round">')
        for a, b in tree.edges:
            x1, y1 = _to_svg(grid, tree.vertices[a], ny)
            x2, y2 = _to_svg(grid, tree.vertices[b], ny)
            out.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}"/>')
        out.append("</g>")
    for kind, nodes, fill in (("source", terminals.sources, "#ffffff"),
                              ("sink", terminals.sinks, "#000000")):
        for k, z in enumerate(nodes):
            cx, cy = _to_svg(grid, grid.coords[z], ny)
            out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{CELL * 0.4:.1f}" fill="{fill}" '
                       f'stroke="#d62728" stroke-width="2"><title>{escape(kind)} {k}</title>'
                       f'</circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_csv(grid: GridSpec, m, path) -> Path:
    path = Path(path)
    axes = ["x", "y", "z"][:grid.ndim]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", *axes, "m"])
        for z, (pt, value) in enumerate(zip(grid.coords, np.asarray(m, dtype=float))):
            writer.writerow([z, *(repr(float(c)) for c in pt), repr(float(value))])
    return path
