"""Minimal static SVG line charts (no plotting dependency).

Deterministic output: fixed canvas, fixed palette, fixed float formatting —
the same data always renders byte-identical markup.
"""

from __future__ import annotations

import math

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 30, 40, 55
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / n))
    for mult in (1, 2, 2.5, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-9:
        out.append(round(t, 10))
        t += step
    return out


def line_chart(path: str, *, title: str, xlabel: str, ylabel: str, series: list,
               y_range: tuple | None = None) -> None:
    """Write a multi-series line chart.

    ``series`` is a list of (name, [(x, y), ...]) pairs; points are drawn in
    the given order.  ``y_range`` pins the y axis (e.g. (0, 1) for F1).
    """
    pts_all = [pt for _, pts in series for pt in pts]
    if not pts_all:
        xs_lo, xs_hi, ys_lo, ys_hi = 0.0, 1.0, 0.0, 1.0
    else:
        xs_lo = min(p[0] for p in pts_all)
        xs_hi = max(p[0] for p in pts_all)
        ys_lo = min(p[1] for p in pts_all)
        ys_hi = max(p[1] for p in pts_all)
    if y_range is not None:
        ys_lo, ys_hi = y_range
    if xs_hi <= xs_lo:
        xs_hi = xs_lo + 1.0
    if ys_hi <= ys_lo:
        ys_hi = ys_lo + 1.0

    def sx(x: float) -> float:
        return _ML + (x - xs_lo) / (xs_hi - xs_lo) * (_W - _ML - _MR)

    def sy(y: float) -> float:
        return _H - _MB - (y - ys_lo) / (ys_hi - ys_lo) * (_H - _MT - _MB)

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="12">'
    )
    out.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    out.append(
        f'<text x="{_W // 2}" y="22" text-anchor="middle" font-size="14">{title}</text>'
    )
    # axes
    out.append(
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>'
    )
    out.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>')
    for t in _ticks(xs_lo, xs_hi):
        if t < xs_lo - 1e-9 or t > xs_hi + 1e-9:
            continue
        x = sx(t)
        out.append(f'<line x1="{_fmt(x)}" y1="{_H - _MB}" x2="{_fmt(x)}" y2="{_H - _MB + 5}" stroke="black"/>')
        out.append(
            f'<text x="{_fmt(x)}" y="{_H - _MB + 20}" text-anchor="middle">{t:g}</text>'
        )
    for t in _ticks(ys_lo, ys_hi):
        if t < ys_lo - 1e-9 or t > ys_hi + 1e-9:
            continue
        y = sy(t)
        out.append(f'<line x1="{_ML - 5}" y1="{_fmt(y)}" x2="{_ML}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(
            f'<text x="{_ML - 8}" y="{_fmt(y + 4)}" text-anchor="end">{t:g}</text>'
        )
    out.append(
        f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="18" y="{_H // 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {_H // 2})">{ylabel}</text>'
    )
    # series
    for i, (name, pts) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        if len(pts) > 1:
            path_d = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
            out.append(
                f'<polyline points="{path_d}" fill="none" stroke="{color}" stroke-width="2"/>'
            )
        for x, y in pts:
            out.append(
                f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{color}"/>'
            )
        ly = _MT + 16 * i
        out.append(
            f'<line x1="{_W - _MR - 150}" y1="{ly}" x2="{_W - _MR - 125}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(f'<text x="{_W - _MR - 118}" y="{ly + 4}">{name}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
