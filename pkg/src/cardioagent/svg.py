"""Minimal deterministic SVG line plots (no plotting library needed)."""

from __future__ import annotations

from html import escape
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def line_plot(
    series: Sequence[Tuple[Sequence[float], Sequence[float]]],
    width: int = 640,
    height: int = 160,
    title: str = "",
    markers: Optional[Dict[str, Iterable[Sequence]]] = None,
    xlabel: str = "",
    ylabel: str = "",
    stroke: float = 1.0,
    opacity: float = 1.0,
) -> str:
    """Render ``(x, y)`` series, plus labelled point markers, as one SVG.

    A marker is ``(x, y)`` or ``(x, y, ref)``; ``ref`` is written to the
    circle's ``data-ref`` attribute.
    """
    pad_l, pad_r, pad_t, pad_b = 40, 10, 18 if title else 6, 18 if xlabel else 6
    xs = [np.asarray(x, dtype=float) for x, _ in series if len(x)]
    ys = [np.asarray(y, dtype=float) for _, y in series if len(y)]
    marker_pts = [p for pts in (markers or {}).values() for p in pts]
    all_x = np.concatenate(xs + [np.array([p[0] for p in marker_pts], dtype=float)]) if xs else np.array([0.0, 1.0])
    all_y = np.concatenate(ys + [np.array([p[1] for p in marker_pts], dtype=float)]) if ys else np.array([0.0, 1.0])
    x0, x1 = float(all_x.min()), float(all_x.max())
    y0, y1 = float(all_y.min()), float(all_y.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    yr = (y1 - y0) * 0.05
    y0, y1 = y0 - yr, y1 + yr
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + (1 - (y - y0) / (y1 - y0)) * ph

    out: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="#fff8f8" stroke="#e0c0c0"/>',
    ]
    if title:
        out.append(f'<text x="{pad_l}" y="12" font-weight="bold">{escape(title)}</text>')
    out.append(f'<text x="2" y="{pad_t + 8}">{_fmt(y1)}</text>')
    out.append(f'<text x="2" y="{pad_t + ph}">{_fmt(y0)}</text>')
    if ylabel:
        out.append(f'<text x="2" y="{pad_t + ph / 2:.0f}">{escape(ylabel)}</text>')
    if xlabel:
        out.append(f'<text x="{pad_l + pw / 2:.0f}" y="{height - 4}" text-anchor="middle">{escape(xlabel)}</text>')
    for i, (x, y) in enumerate(series):
        if not len(x):
            continue
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, y))
        color = PALETTE[i % len(PALETTE)] if len(series) <= len(PALETTE) else PALETTE[0]
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="{stroke}" '
            f'stroke-opacity="{opacity}" points="{pts}"/>'
        )
    for j, (label, pts) in enumerate(sorted((markers or {}).items())):
        color = PALETTE[(j + 1) % len(PALETTE)]
        for pt in pts:
            a, b = pt[0], pt[1]
            ref = f' data-ref="{escape(str(pt[2]))}"' if len(pt) > 2 else ""
            out.append(
                f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="2.5" fill="{color}" '
                f'data-label="{escape(label)}"{ref}/>'
            )
            out.append(
                f'<text x="{_fmt(px(a) + 3)}" y="{_fmt(py(b) - 3)}" fill="{color}">{escape(label)}</text>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"
