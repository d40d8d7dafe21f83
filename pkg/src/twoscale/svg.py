"""Minimal SVG line charts (linear or log-log axes) without a plotting library."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**k for k in range(a, b + 1)]
    step = 10 ** math.floor(math.log10(max(hi - lo, 1e-300)))
    if (hi - lo) / step < 4:
        step /= 2
    start = math.floor(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 2)]


def line_chart(series, xlabel, ylabel, title="", log=False, width=640, height=420) -> str:
    """``series`` is a list of ``(label, xs, ys)``; non-positive values are
    skipped on log axes."""
    pts = []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            if y is None or not math.isfinite(y) or (log and (x <= 0 or y <= 0)):
                continue
            pts.append((x, y))
    if not pts:
        pts = [(1.0, 1.0), (10.0, 10.0)]
    f = (lambda v: math.log10(v)) if log else (lambda v: v)
    xs = [f(p[0]) for p in pts]
    ys = [f(p[1]) for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 70, 170, 40, 50
    W, H = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (f(v) - x0) / (x1 - x0) * W

    def Y(v):
        return mt + H - (f(v) - y0) / (y1 - y0) * H

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{W}" height="{H}" fill="none" stroke="#333"/>',
           f'<text x="{ml + W / 2}" y="22" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<text x="{ml + W / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="16" y="{mt + H / 2}" text-anchor="middle" transform="rotate(-90 16 {mt + H / 2})">{escape(ylabel)}</text>']
    lo = (10**x0, 10**x1) if log else (x0, x1)
    for t in _ticks(*lo, log):
        if f(t) < x0 - 1e-9 or f(t) > x1 + 1e-9:
            continue
        out.append(f'<line x1="{X(t):.1f}" y1="{mt + H}" x2="{X(t):.1f}" y2="{mt + H + 4}" stroke="#333"/>')
        out.append(f'<text x="{X(t):.1f}" y="{mt + H + 16}" text-anchor="middle">{t:.3g}</text>')
    lo = (10**y0, 10**y1) if log else (y0, y1)
    for t in _ticks(*lo, log):
        if f(t) < y0 - 1e-9 or f(t) > y1 + 1e-9:
            continue
        out.append(f'<line x1="{ml - 4}" y1="{Y(t):.1f}" x2="{ml}" y2="{Y(t):.1f}" stroke="#333"/>')
        out.append(f'<text x="{ml - 6}" y="{Y(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    for k, (label, xs_, ys_) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        p = [(X(x), Y(y)) for x, y in zip(xs_, ys_)
             if y is not None and math.isfinite(y) and not (log and (x <= 0 or y <= 0))]
        if p:
            d = " ".join(f"{a:.1f},{b:.1f}" for a, b in p)
            out.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            out.extend(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2.5" fill="{color}"/>' for a, b in p)
        ly = mt + 12 + 16 * k
        out.append(f'<line x1="{ml + W + 10}" y1="{ly}" x2="{ml + W + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + W + 32}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def loglog_chart(series, xlabel, ylabel, title="") -> str:
    return line_chart(series, xlabel, ylabel, title, log=True)
