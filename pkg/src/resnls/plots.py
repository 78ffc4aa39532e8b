"""Minimal deterministic SVG line charts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 800, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50

DARK_GREY = "#4d4d4d"
LIGHT_GREY = "#b3b3b3"
RED = "#d62728"
BLUE = "#1f77b4"


@dataclass
class Line:
    label: str
    xs: Sequence[float]
    ys: Sequence[float]
    color: str = BLUE
    width: float = 1.5


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step) * step
    ticks, v = [], first
    while v <= hi + step * 1e-9:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_chart(
    path: str | Path,
    lines: Sequence[Line],
    title: str,
    xlabel: str = "",
    ylabel: str = "",
    xtick_labels: dict[float, str] | None = None,
) -> None:
    """Write a chart of ``lines`` to ``path``; output depends only on the inputs."""
    xs = [x for ln in lines for x in ln.xs]
    ys = [y for ln in lines for y in ln.ys if math.isfinite(y)]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = (y1 - y0) * 0.05
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN_T + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    for v in _nice_ticks(y0, y1):
        y = sy(v)
        out.append(f'<line x1="{MARGIN_L}" y1="{_fmt(y)}" x2="{MARGIN_L + pw}" y2="{_fmt(y)}" stroke="#eee"/>')
        out.append(f'<text x="{MARGIN_L - 5}" y="{_fmt(y + 4)}" text-anchor="end">{v:g}</text>')
    ticks = xtick_labels if xtick_labels is not None else {v: f"{v:g}" for v in _nice_ticks(x0, x1)}
    for v, label in sorted(ticks.items()):
        x = sx(v)
        out.append(f'<line x1="{_fmt(x)}" y1="{MARGIN_T + ph}" x2="{_fmt(x)}" y2="{MARGIN_T + ph + 4}" stroke="#000"/>')
        out.append(f'<text x="{_fmt(x)}" y="{MARGIN_T + ph + 16}" text-anchor="middle">{escape(label)}</text>')
    if xlabel:
        out.append(f'<text x="{MARGIN_L + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(
            f'<text x="16" y="{MARGIN_T + ph / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {MARGIN_T + ph / 2})">{escape(ylabel)}</text>'
        )
    for ln in lines:
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(ln.xs, ln.ys) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{ln.color}" stroke-width="{ln.width}" points="{pts}"/>')
    for i, ln in enumerate(lines):
        ly = MARGIN_T + 14 + 16 * i
        out.append(f'<line x1="{MARGIN_L + 10}" y1="{ly}" x2="{MARGIN_L + 30}" y2="{ly}" stroke="{ln.color}" stroke-width="2"/>')
        out.append(f'<text x="{MARGIN_L + 35}" y="{ly + 4}">{escape(ln.label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def date_ticks(dates: Sequence, count: int = 6) -> dict[float, str]:
    if not dates:
        return {}
    step = max(1, (len(dates) - 1) // max(1, count - 1))
    return {float(i): dates[i].isoformat() for i in range(0, len(dates), step)}
