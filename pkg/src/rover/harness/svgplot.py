"""Minimal SVG line charts: one colour per series, shaded min/max envelopes, optional log axis."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=50)


def _transform(v, log_y, floor):
    v = np.asarray(v, dtype=float)
    if log_y:
        return np.log10(np.maximum(v, floor))
    return v


def _ticks(lo, hi, log_y):
    if log_y:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, (b - a) // 6)
        return [(x, f"1e{x}") for x in range(a, b + 1, step)]
    vals = np.linspace(lo, hi, 6)
    return [(v, f"{v:.3g}") for v in vals]


def line_plot(path, series: dict, title: str = "", xlabel: str = "iteration", ylabel: str = "f",
              log_y: bool = True, floor: float = 1e-12) -> None:
    """``series`` maps a label to ``(mean, low, high)`` arrays; ``low``/``high`` may be None."""
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    ys = []
    n_max = 1
    for mean, lo, hi in series.values():
        for arr in (mean, lo, hi):
            if arr is not None:
                t = _transform(arr, log_y, floor)
                ys.append(t[np.isfinite(t)])
                n_max = max(n_max, len(arr))
    ys = np.concatenate(ys) if ys else np.zeros(1)
    ymin, ymax = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if ymax - ymin < 1e-12:
        ymin, ymax = ymin - 1.0, ymax + 1.0

    def px(i):
        return MARGIN["left"] + pw * i / max(1, n_max - 1)

    def py(v):
        return MARGIN["top"] + ph * (1.0 - (v - ymin) / (ymax - ymin))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="#444"/>']
    for v, label in _ticks(ymin, ymax, log_y):
        if ymin <= v <= ymax:
            y = py(v)
            out.append(f'<line x1="{MARGIN["left"] - 4}" x2="{MARGIN["left"]}" y1="{y:.1f}" y2="{y:.1f}" stroke="#444"/>')
            out.append(f'<text x="{MARGIN["left"] - 6}" y="{y + 4:.1f}" text-anchor="end">{label}</text>')
    for i in np.unique(np.linspace(0, n_max - 1, 6).round().astype(int)):
        x = px(i)
        out.append(f'<text x="{x:.1f}" y="{HEIGHT - MARGIN["bottom"] + 16}" text-anchor="middle">{i}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.0f})">{escape(ylabel)}</text>')

    for k, (label, (mean, lo, hi)) in enumerate(series.items()):
        colour = PALETTE[k % len(PALETTE)]
        if lo is not None and hi is not None:
            l, h = _transform(lo, log_y, floor), _transform(hi, log_y, floor)
            ok = np.flatnonzero(np.isfinite(l) & np.isfinite(h))
            if len(ok) > 1:
                upper = " ".join(f"{px(i):.1f},{py(h[i]):.1f}" for i in ok)
                lower = " ".join(f"{px(i):.1f},{py(l[i]):.1f}" for i in ok[::-1])
                out.append(f'<polygon points="{upper} {lower}" fill="{colour}" fill-opacity="0.18" stroke="none"/>')
        m = _transform(mean, log_y, floor)
        ok = np.flatnonzero(np.isfinite(m))
        if len(ok):
            pts = " ".join(f"{px(i):.1f},{py(m[i]):.1f}" for i in ok)
            out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.8"/>')
        ly = MARGIN["top"] + 14 + 18 * k
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" x2="{lx + 18}" y1="{ly - 4}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
