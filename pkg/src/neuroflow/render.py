"""Figure-ready quiver export of an edge flow: JSON description and SVG.

Arrows sit at edge midpoints and point along the physical transport
direction; lengths scale with transport magnitude.  The stimulation site
is marked with a cross.
"""

from __future__ import annotations

import numpy as np

from .model import physical_flow
from .topology import GraphTopology


def quiver_data(topology: GraphTopology, flow, stim_location=None) -> dict:
    """One arrow per edge: midpoint, unit direction of transport, magnitude.

    Zero-flow edges keep a zero direction vector so the arrow count always
    equals the edge count.
    """
    f = np.asarray(flow, dtype=np.float64).ravel()
    if f.shape != (topology.n_edges,):
        raise ValueError(f"flow has shape {f.shape}, expected ({topology.n_edges},)")
    phi = physical_flow(f)
    tail_xy = topology.locations[topology.tails]
    head_xy = topology.locations[topology.heads]
    mid = 0.5 * (tail_xy + head_xy)
    axis = head_xy - tail_xy
    axis = axis / np.linalg.norm(axis, axis=1, keepdims=True)
    arrows = []
    for e in range(topology.n_edges):
        direction = np.sign(phi[e]) * axis[e]
        arrows.append(
            {
                "tail": int(topology.tails[e]),
                "head": int(topology.heads[e]),
                "mid": [float(mid[e, 0]), float(mid[e, 1])],
                "dir": [float(direction[0]), float(direction[1])],
                "magnitude": float(abs(phi[e])),
            }
        )
    out = {"arrows": arrows}
    if stim_location is not None:
        xs = np.asarray(stim_location, dtype=np.float64).ravel()
        out["stim"] = [float(xs[0]), float(xs[1])]
    return out


def quiver_svg(topology: GraphTopology, flow, stim_location=None,
               width: int = 480) -> str:
    """Self-contained SVG drawing of the quiver (lines plus arrowheads)."""
    data = quiver_data(topology, flow, stim_location)
    loc = topology.locations
    lo = loc.min(axis=0)
    hi = loc.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin = 0.08 * span.max()
    scale = width / (span[0] + 2 * margin)
    height = int(round((span[1] + 2 * margin) * scale))

    def to_px(xy):
        x = (xy[0] - lo[0] + margin) * scale
        y = height - (xy[1] - lo[1] + margin) * scale  # image y grows downward
        return x, y

    max_mag = max((a["magnitude"] for a in data["arrows"]), default=0.0)
    unit = 0.45 * span.max() / max(len(loc) ** 0.5, 1.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for x, y in loc:
        px, py = to_px((x, y))
        parts.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.2" fill="#b0b0b0"/>'
        )
    for arrow in data["arrows"]:
        mag = arrow["magnitude"]
        if max_mag == 0 or mag == 0:
            continue
        half = 0.5 * unit * (mag / max_mag)
        mx, my = arrow["mid"]
        dx, dy = arrow["dir"]
        x0, y0 = to_px((mx - half * dx, my - half * dy))
        x1, y1 = to_px((mx + half * dx, my + half * dy))
        parts.append(
            f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
            'stroke="#1f4e9c" stroke-width="1.4"/>'
        )
        # arrowhead: two short strokes back from the tip
        vx, vy = x1 - x0, y1 - y0
        norm = max((vx * vx + vy * vy) ** 0.5, 1e-9)
        ux, uy = vx / norm, vy / norm
        head = min(6.0, 0.5 * norm)
        for side in (1.0, -1.0):
            hx = x1 - head * (ux + side * 0.5 * -uy)
            hy = y1 - head * (uy + side * 0.5 * ux)
            parts.append(
                f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{hx:.2f}" y2="{hy:.2f}" '
                'stroke="#1f4e9c" stroke-width="1.4"/>'
            )
    if "stim" in data:
        sx, sy = to_px(data["stim"])
        r = 6.0
        parts.append(
            f'<line x1="{sx - r:.2f}" y1="{sy - r:.2f}" x2="{sx + r:.2f}" '
            f'y2="{sy + r:.2f}" stroke="black" stroke-width="2"/>'
        )
        parts.append(
            f'<line x1="{sx - r:.2f}" y1="{sy + r:.2f}" x2="{sx + r:.2f}" '
            f'y2="{sy - r:.2f}" stroke="black" stroke-width="2"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
