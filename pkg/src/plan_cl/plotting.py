"""Static SVG line charts written by hand, plus the CSV behind each chart.

Output depends only on the input numbers, so identical inputs give
byte-identical files.
"""
from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
WIDTH, HEIGHT = 560, 360
MARGIN = dict(left=60, right=150, top=40, bottom=50)


@dataclass
class Series:
    label: str
    values: list[float]


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def _nice_range(lo: float, hi: float) -> tuple[float, float, float]:
    if hi - lo < 1e-9:
        lo, hi = lo - 0.05, hi + 0.05
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / 4))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= 6:
            step *= mult
            break
    return math.floor(lo / step) * step, math.ceil(hi / step) * step, step


def line_chart(series: Sequence[Series], title: str, x_label: str, y_label: str) -> str:
    if not series:
        raise ValueError("nothing to plot")
    n = max(len(s.values) for s in series)
    all_vals = [v for s in series for v in s.values]
    lo, hi, step = _nice_range(min(all_vals), max(all_vals))
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def px(i: int) -> float:
        return x0 + (x1 - x0) * (i / (n - 1) if n > 1 else 0.5)

    def py(v: float) -> float:
        return y0 - (y0 - y1) * (v - lo) / (hi - lo)

    out = io.StringIO()
    w = out.write
    w(f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">\n')
    w(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n')
    w(f'<text x="{(x0 + x1) / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>\n')
    ticks = round((hi - lo) / step)
    for k in range(ticks + 1):
        v = lo + k * step
        y = py(v)
        w(f'<line x1="{x0}" y1="{y:.2f}" x2="{x1}" y2="{y:.2f}" stroke="#dddddd"/>\n')
        w(f'<text x="{x0 - 6}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{_fmt(v)}</text>\n')
    for i in range(n):
        x = px(i)
        w(f'<line x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 4}" stroke="black"/>\n')
        w(f'<text x="{x:.2f}" y="{y0 + 17}" text-anchor="middle" font-family="sans-serif" font-size="11">{i + 1}</text>\n')
    w(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>\n')
    w(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>\n')
    w(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(x_label)}</text>\n')
    w(f'<text x="16" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
      f'transform="rotate(-90 16 {(y0 + y1) / 2:.1f})">{escape(y_label)}</text>\n')
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(s.values))
        w(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>\n')
        for i, v in enumerate(s.values):
            w(f'<circle cx="{px(i):.2f}" cy="{py(v):.2f}" r="3" fill="{color}"/>\n')
        ly = y1 + 18 * k
        w(f'<g class="legend-entry"><line x1="{x1 + 12}" y1="{ly}" x2="{x1 + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>'
          f'<text x="{x1 + 38}" y="{ly + 4}" font-family="sans-serif" font-size="12">{escape(s.label)}</text></g>\n')
    w("</svg>\n")
    return out.getvalue()


def series_csv(series: Sequence[Series], x_name: str = "task") -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["label", x_name, "value"])
    for s in series:
        for i, v in enumerate(s.values):
            wr.writerow([s.label, i + 1, repr(float(v))])
    return buf.getvalue()
