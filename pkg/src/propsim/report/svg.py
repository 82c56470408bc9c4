"""Minimal SVG writer with fixed number formatting, so output is byte-stable."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape, quoteattr


def _num(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


class SVG:
    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.parts: list[str] = []

    def _attrs(self, extra: dict) -> str:
        return "".join(f" {k.rstrip('_').replace('_', '-')}={quoteattr(str(v))}" for k, v in extra.items())

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None, **extra):
        if dash:
            extra["stroke_dasharray"] = dash
        self.parts.append(
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
            f'stroke="{stroke}" stroke-width="{_num(width)}"{self._attrs(extra)}/>'
        )

    def rect(self, x, y, w, h, fill="none", stroke="#000", **extra):
        self.parts.append(
            f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(w)}" height="{_num(h)}" '
            f'fill="{fill}" stroke="{stroke}"{self._attrs(extra)}/>'
        )

    def circle(self, cx, cy, r, fill="#000", **extra):
        self.parts.append(f'<circle cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(r)}" fill="{fill}"{self._attrs(extra)}/>')

    def polyline(self, points, stroke="#000", width=1.5, dash=None, **extra):
        if dash:
            extra["stroke_dasharray"] = dash
        pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in points)
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{_num(width)}"{self._attrs(extra)}/>')

    def text(self, x, y, s, size=11, anchor="start", **extra):
        self.parts.append(
            f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" font-family="sans-serif" '
            f'text-anchor="{anchor}"{self._attrs(extra)}>{escape(str(s))}</text>'
        )

    def open_group(self, **extra):
        self.parts.append(f"<g{self._attrs(extra)}>")

    def close_group(self):
        self.parts.append("</g>")

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(self.width)}" height="{_num(self.height)}" '
            f'viewBox="0 0 {_num(self.width)} {_num(self.height)}">'
        )
        return "\n".join([head, f'<rect x="0" y="0" width="{_num(self.width)}" height="{_num(self.height)}" fill="#fff"/>', *self.parts, "</svg>"]) + "\n"


class Axis:
    """Linear map from data to pixel coordinates."""

    def __init__(self, lo: float, hi: float, p0: float, p1: float):
        if not hi > lo:
            lo, hi = lo - 0.5, lo + 0.5
        self.lo, self.hi, self.p0, self.p1 = lo, hi, p0, p1

    def __call__(self, v: float) -> float:
        v = min(max(v, self.lo), self.hi)
        return self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    span = hi - lo
    if not span > 0:
        return [lo]
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    k = 0
    while first + k * step <= hi + 1e-9 * step:
        ticks.append(round(first + k * step, 10))
        k += 1
    return ticks


def fmt_tick(v: float) -> str:
    return f"{v:g}"
