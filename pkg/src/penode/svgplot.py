"""Minimal self-contained SVG line charts."""
from __future__ import annotations

from html import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#7f7f7f")


def _nice_ticks(lo, hi, count=5):
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / count
    mag = 10.0 ** np.floor(np.log10(raw))
    step = mag * min((1, 2, 5, 10), key=lambda k: abs(k * mag - raw))
    return np.arange(np.ceil(lo / step) * step, hi + 0.5 * step, step)


def line_chart(series: dict, x, title: str = "", xlabel: str = "", ylabel: str = "",
               width: int = 640, height: int = 360) -> str:
    """SVG text for one or more lines sharing the x values; NaNs break a line."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] or [np.zeros(1)])
    if finite.size == 0:
        finite = np.zeros(1)
    y_lo, y_hi = float(finite.min()), float(finite.max())
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = float(np.min(x)), float(np.max(x))
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    left, right, top, bottom = 64, 16, 32, 44
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return top + (y_hi - v) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for tx in _nice_ticks(x_lo, x_hi):
        out.append(f'<line x1="{sx(tx):.1f}" y1="{top + ph}" x2="{sx(tx):.1f}" y2="{top + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{sx(tx):.1f}" y="{top + ph + 16}" text-anchor="middle">{tx:g}</text>')
    for ty in _nice_ticks(y_lo, y_hi):
        out.append(f'<line x1="{left - 4}" y1="{sy(ty):.1f}" x2="{left}" y2="{sy(ty):.1f}" stroke="#444"/>')
        out.append(f'<text x="{left - 6}" y="{sy(ty) + 4:.1f}" text-anchor="end">{ty:.3g}</text>')
    for i, (name, y) in enumerate(ys.items()):
        color = _COLORS[i % len(_COLORS)]
        ok = np.isfinite(y) & np.isfinite(x)
        # split into runs of finite points
        breaks = np.flatnonzero(np.diff(ok.astype(int)) != 0) + 1
        for seg in np.split(np.arange(x.size), breaks):
            seg = seg[ok[seg]]
            if seg.size < 2:
                continue
            pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x[seg], y[seg]))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{left + 8}" y="{top + 14 + 14 * i}" fill="{color}">{escape(str(name))}</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def write_chart(path, series: dict, x, **kwargs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(line_chart(series, x, **kwargs))
