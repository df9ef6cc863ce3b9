"""Deterministic SVG rendering of observations, sampling weights and
assignments. Output is plain text built with fixed float formatting, so
identical inputs yield byte-identical files."""

from __future__ import annotations

import numpy as np

PANEL = 220.0
MARGIN = 14.0
PALETTE = ["#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00",
           "#a65628", "#f781bf", "#17becf", "#bcbd22", "#8c564b"]
OUTLIER_COLOR = "#bbbbbb"


def _f(x: float) -> str:
    return f"{x:.3f}"


def _heat_color(value: float) -> str:
    """Blue (low) to white (high)."""
    v = min(max(value, 0.0), 1.0)
    r = int(round(40 + 215 * v))
    g = int(round(40 + 215 * v))
    return f"#{r:02x}{g:02x}ff"


def _panel_transform(points: np.ndarray):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)

    def to_panel(p, ox):
        x = (p[0] - lo[0]) / span * (PANEL - 2 * MARGIN) + MARGIN + ox
        y = PANEL - ((p[1] - lo[1]) / span * (PANEL - 2 * MARGIN) + MARGIN)
        return x, y

    return to_panel


def _draw_observation(parts, kind, row, to_panel, ox, color):
    if kind in ("line",):
        px, py = to_panel((row[0], row[1]), ox)
        parts.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="1.6" fill="{color}"/>')
    elif kind == "vp":
        x1, y1 = to_panel((row[0], row[1]), ox)
        x2, y2 = to_panel((row[2], row[3]), ox)
        parts.append(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                     f'stroke="{color}" stroke-width="1.2"/>')
    else:  # homography: draw the first-view point
        px, py = to_panel((row[0], row[1]), ox)
        parts.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="1.6" fill="{color}"/>')


def render_fit_svg(kind: str, observations: np.ndarray, step_weights: np.ndarray,
                   assignments: np.ndarray) -> str:
    """One panel per instance step (observations heat-mapped by sampling
    weight) plus a final panel colored by the observation-to-model assignment."""
    observations = np.asarray(observations, dtype=np.float64)
    pts = observations[:, 0:2]
    to_panel = _panel_transform(pts)
    steps = len(step_weights)
    width = PANEL * (steps + 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(width)}" '
             f'height="{int(PANEL)}" viewBox="0 0 {int(width)} {int(PANEL)}">',
             f'<rect width="{int(width)}" height="{int(PANEL)}" fill="#111111"/>']
    for m in range(steps):
        ox = m * PANEL
        w = np.asarray(step_weights[m], dtype=np.float64)
        wmax = max(float(w.max()), 1e-12)
        parts.append(f'<text x="{_f(ox + MARGIN)}" y="11" fill="#999999" '
                     f'font-size="9">step {m + 1}</text>')
        for i, row in enumerate(observations):
            _draw_observation(parts, kind, row, to_panel, ox,
                              _heat_color(w[i] / wmax))
    ox = steps * PANEL
    parts.append(f'<text x="{_f(ox + MARGIN)}" y="11" fill="#999999" '
                 f'font-size="9">assignment</text>')
    for i, row in enumerate(observations):
        label = int(assignments[i])
        color = OUTLIER_COLOR if label < 0 else PALETTE[label % len(PALETTE)]
        _draw_observation(parts, kind, row, to_panel, ox, color)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
