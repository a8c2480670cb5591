"""Minimal SVG line charts: axes, tick labels, one polyline per series, legend.

Pixel mapping (documented so tests can invert it)::

    x_px = LEFT + (x - x_lo) / (x_hi - x_lo) * (WIDTH - LEFT - RIGHT)
    y_px = TOP  + (y_hi - y) / (y_hi - y_lo) * (HEIGHT - TOP - BOTTOM)

where ``[x_lo, x_hi]`` / ``[y_lo, y_hi]`` span the data of all series (a
degenerate span is widened by 0.5 on each side).  Coordinates are written
with two decimals.
"""

from __future__ import annotations

from html import escape
from typing import Mapping, Sequence

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 30, 50
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"]


def data_range(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi - lo <= 0:
        return lo - 0.5, hi + 0.5
    return lo, hi


def to_pixels(x, y, xr, yr) -> tuple[float, float]:
    px = LEFT + (x - xr[0]) / (xr[1] - xr[0]) * (WIDTH - LEFT - RIGHT)
    py = TOP + (yr[1] - y) / (yr[1] - yr[0]) * (HEIGHT - TOP - BOTTOM)
    return px, py


def line_chart(series: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str = "",
               xlabel: str = "", ylabel: str = "", dashed: Sequence[str] = ()) -> str:
    if not series:
        raise ValueError("nothing to plot")
    xs = [float(v) for x, _ in series.values() for v in x]
    ys = [float(v) for _, y in series.values() for v in y]
    xr, yr = data_range(xs), data_range(ys)
    x0, x1 = LEFT, WIDTH - RIGHT
    y0, y1 = TOP, HEIGHT - BOTTOM
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{(x0 + x1) / 2:.2f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line class="axis" x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>',
        f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for k in range(5):
        fx = xr[0] + (xr[1] - xr[0]) * k / 4
        fy = yr[0] + (yr[1] - yr[0]) * k / 4
        px, _ = to_pixels(fx, yr[0], xr, yr)
        _, py = to_pixels(xr[0], fy, xr, yr)
        out.append(f'<text class="tick" x="{px:.2f}" y="{y1 + 16}" text-anchor="middle" '
                   f'font-size="10">{fx:.4g}</text>')
        out.append(f'<text class="tick" x="{x0 - 6}" y="{py + 3:.2f}" text-anchor="end" '
                   f'font-size="10">{fy:.4g}</text>')
    out.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle" '
               f'font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 14 {(y0 + y1) / 2:.2f})">{escape(ylabel)}</text>')
    for i, (name, (x, y)) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = " ".join("{:.2f},{:.2f}".format(*to_pixels(float(a), float(b), xr, yr)) for a, b in zip(x, y))
        dash = ' stroke-dasharray="6,3"' if name in dashed else ""
        out.append(f'<polyline data-series="{escape(name)}" points="{pts}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"{dash}/>')
        if len(x) == 1:
            px, py = to_pixels(float(x[0]), float(y[0]), xr, yr)
            out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{color}"/>')
        ly = TOP + 10 + 18 * i
        out.append(f'<line x1="{x1 + 12}" y1="{ly}" x2="{x1 + 32}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text class="legend" x="{x1 + 38}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
