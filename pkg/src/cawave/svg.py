"""Self-contained SVG line charts with a sibling CSV of the plotted numbers.

Line style encodes stability: solid for stable samples, dashed for unstable
ones and dotted where no verdict is available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import DomainError, EmptyDataset
from .output import atomic_write_text, write_csv

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=72, right=150, top=40, bottom=56)
DASH = {"solid": None, "dashed": "7 4", "dotted": "2 3"}


@dataclass
class Series:
    """A polyline; ``stable`` (one flag per point, None for unknown) overrides ``style``."""
    label: str
    x: Sequence[float]
    y: Sequence[float]
    color: str = "black"
    style: str = "solid"
    stable: Sequence | None = None
    width: float = 1.8

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.shape != self.y.shape:
            raise DomainError(f"series {self.label!r}: x and y lengths differ ({self.x.size} vs {self.y.size})")
        if self.stable is not None and len(self.stable) != self.x.size:
            raise DomainError(f"series {self.label!r}: one stability flag per point is required")
        if self.style not in DASH:
            raise DomainError(f"unknown line style {self.style!r}")

    def point_styles(self) -> list[str]:
        if self.stable is None:
            return [self.style] * self.x.size
        return ["dotted" if s is None else ("solid" if s else "dashed") for s in self.stable]


@dataclass
class Marker:
    """A labeled point, e.g. a critical curvature."""
    label: str
    x: float
    y: float
    color: str = "black"


@dataclass
class Axes:
    title: str = ""
    xlabel: str = "x"
    ylabel: str = "y"
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None
    notes: list = field(default_factory=list)


def nice_ticks(lo: float, hi: float, target: int = 8) -> np.ndarray:
    """Round tick positions covering [lo, hi]."""
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise DomainError("non-finite axis range")
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = np.arange(start, hi + 0.5 * step, step)
    ticks[np.abs(ticks) < 1e-12 * step] = 0.0
    return ticks[(ticks >= lo - 1e-9 * step) & (ticks <= hi + 1e-9 * step)]


def _limits(values: list[np.ndarray], lim):
    if lim is not None:
        return float(lim[0]), float(lim[1])
    v = np.concatenate([x[np.isfinite(x)] for x in values]) if values else np.array([])
    if v.size == 0:
        raise EmptyDataset("nothing finite to plot")
    lo, hi = float(v.min()), float(v.max())
    pad = 0.04 * (hi - lo) if hi > lo else (abs(lo) * 0.1 or 1.0)
    return lo - pad, hi + pad


def _num(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(t: float) -> str:
    return f"{t:.6g}"


class _Canvas:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        self.left, self.top = MARGIN["left"], MARGIN["top"]
        self.w = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x):
        return self.left + (np.asarray(x) - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y):
        return self.top + (self.y1 - np.asarray(y)) / (self.y1 - self.y0) * self.h


def _segments(s: Series):
    """(style, [(x, y), ...]) runs; a style change splits at the midpoint, nan breaks the line."""
    styles = s.point_styles()
    runs, cur, cur_style = [], [], None
    for i in range(s.x.size):
        p = (s.x[i], s.y[i])
        if not (np.isfinite(p[0]) and np.isfinite(p[1])):
            if len(cur) > 1:
                runs.append((cur_style, cur))
            cur, cur_style = [], None
            continue
        if cur_style is None:
            cur, cur_style = [p], styles[i]
        elif styles[i] == cur_style:
            cur.append(p)
        else:
            mid = (0.5 * (cur[-1][0] + p[0]), 0.5 * (cur[-1][1] + p[1]))
            cur.append(mid)
            runs.append((cur_style, cur))
            cur, cur_style = [mid, p], styles[i]
    if len(cur) > 1:
        runs.append((cur_style, cur))
    return runs


def emit_figure(name: str, datasets: Sequence, style: Axes | None = None) -> str:
    """SVG document for ``datasets`` (Series and Marker objects).

    Empty series are left out and listed as absent in the legend area; a
    figure with nothing to draw raises EmptyDataset.
    """
    style = style or Axes(title=name)
    series = [d for d in datasets if isinstance(d, Series)]
    markers = [d for d in datasets if isinstance(d, Marker)]
    unknown = [d for d in datasets if not isinstance(d, (Series, Marker))]
    if unknown:
        raise DomainError(f"unsupported dataset type {type(unknown[0]).__name__}")
    drawn = [s for s in series if np.any(np.isfinite(s.x) & np.isfinite(s.y))]
    absent = [s.label for s in series if s not in drawn]
    markers = [m for m in markers if np.isfinite(m.x) and np.isfinite(m.y)]
    if not drawn and not markers:
        raise EmptyDataset(f"figure {name!r} has no data")

    xs = [s.x for s in drawn] + [np.array([m.x for m in markers])]
    ys = [s.y for s in drawn] + [np.array([m.y for m in markers])]
    cv = _Canvas(_limits(xs, style.xlim), _limits(ys, style.ylim))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<title>{escape(style.title or name)}</title>',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<defs><clipPath id="plot"><rect x="{cv.left}" y="{cv.top}" width="{cv.w}" height="{cv.h}"/>'
           '</clipPath></defs>']
    # axes and ticks
    out.append(f'<rect x="{cv.left}" y="{cv.top}" width="{cv.w}" height="{cv.h}" fill="none" stroke="black"/>')
    for t in nice_ticks(cv.x0, cv.x1):
        X = _num(cv.px(t))
        out.append(f'<line x1="{X}" y1="{cv.top + cv.h}" x2="{X}" y2="{cv.top + cv.h + 5}" stroke="black"/>')
        out.append(f'<text x="{X}" y="{cv.top + cv.h + 18}" text-anchor="middle">{_tick_label(t)}</text>')
    for t in nice_ticks(cv.y0, cv.y1):
        Y = _num(cv.py(t))
        out.append(f'<line x1="{cv.left - 5}" y1="{Y}" x2="{cv.left}" y2="{Y}" stroke="black"/>')
        out.append(f'<text x="{cv.left - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">'
                   f'{_tick_label(t)}</text>')
    out.append(f'<text x="{cv.left + cv.w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(style.xlabel)}</text>')
    out.append(f'<text x="16" y="{cv.top + cv.h / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {cv.top + cv.h / 2:.1f})">{escape(style.ylabel)}</text>')
    if style.title:
        out.append(f'<text x="{cv.left + cv.w / 2:.1f}" y="24" text-anchor="middle" font-size="14">'
                   f'{escape(style.title)}</text>')

    out.append('<g clip-path="url(#plot)" fill="none" stroke-linejoin="round">')
    for s in drawn:
        for ls, pts in _segments(s):
            P = " ".join(f"{_num(cv.px(x))},{_num(cv.py(y))}" for x, y in pts)
            dash = f' stroke-dasharray="{DASH[ls]}"' if DASH[ls] else ""
            out.append(f'<polyline points="{P}" stroke="{s.color}" stroke-width="{s.width}"{dash}>'
                       f'<title>{escape(s.label)}</title></polyline>')
    out.append('</g>')
    for m in markers:
        X, Y = _num(cv.px(m.x)), _num(cv.py(m.y))
        out.append(f'<circle cx="{X}" cy="{Y}" r="3.5" fill="{m.color}"/>')
        out.append(f'<text x="{float(X) + 6:.2f}" y="{float(Y) - 6:.2f}" fill="{m.color}">{escape(m.label)}</text>')

    # legend and notes
    ly = cv.top + 8
    lx = cv.left + cv.w + 12
    for s in drawn:
        dash = f' stroke-dasharray="{DASH[s.style]}"' if s.stable is None and DASH[s.style] else ""
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{s.color}" '
                   f'stroke-width="{s.width}"{dash}/>')
        out.append(f'<text x="{lx + 30}" y="{ly}" dominant-baseline="middle">{escape(s.label)}</text>')
        ly += 18
    if any(s.stable is not None for s in drawn):
        ly += 6
        for ls, text in (("solid", "stable"), ("dashed", "unstable")):
            dash = f' stroke-dasharray="{DASH[ls]}"' if DASH[ls] else ""
            out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="gray"{dash}/>')
            out.append(f'<text x="{lx + 30}" y="{ly}" dominant-baseline="middle">{text}</text>')
            ly += 18
    for note in [f"{a}: no data" for a in absent] + list(style.notes):
        ly += 4
        out.append(f'<text x="{lx}" y="{ly}" font-style="italic" fill="dimgray">{escape(note)}</text>')
        ly += 14
    out.append('</svg>')
    return "\n".join(out) + "\n"


def figure_rows(datasets: Sequence):
    """Rows (dataset, kind, x, y, style) holding exactly the numbers that are drawn."""
    rows = []
    for d in datasets:
        if isinstance(d, Series):
            for x, y, ls in zip(d.x, d.y, d.point_styles()):
                if np.isfinite(x) and np.isfinite(y):
                    rows.append((d.label, "line", x, y, ls))
        elif isinstance(d, Marker) and np.isfinite(d.x) and np.isfinite(d.y):
            rows.append((d.label, "point", d.x, d.y, ""))
    return rows


def write_figure(path: str | Path, datasets: Sequence, style: Axes | None = None) -> tuple[Path, Path]:
    """Write ``<path>.svg`` and its sibling ``<path>.csv``."""
    path = Path(path).with_suffix(".svg")
    svg = emit_figure(path.stem, datasets, style)
    atomic_write_text(path, svg)
    csv_path = write_csv(path.with_suffix(".csv"), ["dataset", "kind", "x", "y", "style"], figure_rows(datasets))
    return path, csv_path
