"""Dependency-free SVG line plots for the metric curves."""

from __future__ import annotations

from pathlib import Path

WIDTH, HEIGHT, MARGIN = 480, 360, 48


def _map(x, y):
    px = MARGIN + x * (WIDTH - 2 * MARGIN)
    py = HEIGHT - MARGIN - y * (HEIGHT - 2 * MARGIN)
    return px, py


def write_curve(path, points, xlabel: str, ylabel: str, title: str) -> None:
    """Plot unit-square data (both axes in [0, 1]) as an SVG polyline."""
    coords = " ".join(f"{px:.2f},{py:.2f}" for px, py in (_map(x, y) for x, y in points))
    x0, y0 = _map(0, 0)
    x1, y1 = _map(1, 1)
    ticks = []
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        tx, _ = _map(v, 0)
        _, ty = _map(0, v)
        ticks.append(f'<text x="{tx:.0f}" y="{y0 + 16:.0f}" font-size="10" '
                     f'text-anchor="middle">{v:g}</text>')
        ticks.append(f'<text x="{x0 - 6:.0f}" y="{ty + 3:.0f}" font-size="10" '
                     f'text-anchor="end">{v:g}</text>')
    svg = f"""<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{WIDTH / 2}" y="20" font-size="14" text-anchor="middle">{title}</text>
<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>
<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>
{chr(10).join(ticks)}
<text x="{WIDTH / 2}" y="{HEIGHT - 8}" font-size="12" text-anchor="middle">{xlabel}</text>
<text x="14" y="{HEIGHT / 2}" font-size="12" text-anchor="middle"
 transform="rotate(-90 14 {HEIGHT / 2})">{ylabel}</text>
<polyline points="{coords}" fill="none" stroke="#1f6fb2" stroke-width="1.5"/>
</svg>
"""
    Path(path).write_text(svg)
