"""SVG rendering of mask grids with truth/prediction box overlays.

Plain-text SVG keeps the output dependency-free and lets tests assert exact
rectangle coordinates by parsing the file.
"""

from __future__ import annotations

import numpy as np

from .labels import KeypointBox

CELL = 24  # pixels per mask cell


def render_sample_svg(mask: np.ndarray, truth: KeypointBox | None,
                      predicted: KeypointBox | None) -> str:
    h, w = mask.shape
    width, height = w * CELL, h * CELL
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for r in range(h):
        for c in range(w):
            if mask[r, c]:
                parts.append(
                    f'<rect x="{c * CELL}" y="{r * CELL}" width="{CELL}" height="{CELL}" '
                    f'fill="#404040"/>')
    # light grid lines
    for c in range(w + 1):
        parts.append(f'<line x1="{c * CELL}" y1="0" x2="{c * CELL}" y2="{height}" '
                     f'stroke="#d0d0d0" stroke-width="1"/>')
    for r in range(h + 1):
        parts.append(f'<line x1="0" y1="{r * CELL}" x2="{width}" y2="{r * CELL}" '
                     f'stroke="#d0d0d0" stroke-width="1"/>')

    def box_rect(box: KeypointBox, color: str, cls: str) -> str:
        x = box.x_min * width
        y = box.y_min * height
        bw = max(0.0, (box.x_max - box.x_min)) * width
        bh = max(0.0, (box.y_max - box.y_min)) * height
        return (f'<rect class="{cls}" x="{x:.3f}" y="{y:.3f}" width="{bw:.3f}" '
                f'height="{bh:.3f}" fill="none" stroke="{color}" stroke-width="2"/>')

    if truth is not None:
        parts.append(box_rect(truth, "#00a000", "truth"))
    if predicted is not None:
        parts.append(box_rect(predicted, "#d00000", "predicted"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
