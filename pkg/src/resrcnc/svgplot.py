"""Static SVG line charts: mean lines with optional +-1 sigma shaded bands.

No plotting dependency; output is a pure function of the inputs (fixed
coordinate formatting, no timestamps), so identical series give identical
bytes.  NaN runs split lines and bands into segments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ConfigError

W, H = 880, 430
ML, MR, MT, MB = 64, 20, 34, 46  # margins
MR_SPLIT = 64                    # room for a right-hand axis


@dataclass
class Series:
    name: str
    x: np.ndarray
    mean: np.ndarray
    std: np.ndarray | None = None
    color: str = "#1f77b4"
    dash: bool = False

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        if self.std is not None:
            self.std = np.asarray(self.std, dtype=float)
        if self.x.size == 0 or self.x.shape != self.mean.shape:
            raise ConfigError(f"series {self.name!r}: empty or mismatched")


def _stride(n: int, target: int = 900) -> int:
    return max(1, n // target)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for m in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= m * mag:
            step = m * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _finite_range(arrs: list[np.ndarray]) -> tuple[float, float]:
    lo, hi = math.inf, -math.inf
    for a in arrs:
        f = a[np.isfinite(a)]
        if f.size:
            lo = min(lo, float(f.min()))
            hi = max(hi, float(f.max()))
    if not math.isfinite(lo):
        raise ConfigError("no finite data to plot")
    if hi <= lo:
        hi = lo + 1.0
    return lo, hi


def _segments(y: np.ndarray):
    """Index runs where y is finite."""
    idx = np.flatnonzero(np.isfinite(y))
    if idx.size == 0:
        return
    breaks = np.flatnonzero(np.diff(idx) > 1)
    start = 0
    for b in list(breaks) + [idx.size - 1]:
        seg = idx[start:b + 1]
        if seg.size >= 1:
            yield seg
        start = b + 1


def line_chart(path: str | Path, series: list[Series], title: str = "",
               xlabel: str = "", ylabel: str = "",
               ref_line: float | None = None, staircase: bool = False,
               split_axes: bool = False) -> None:
    """Write one SVG chart.  ``staircase`` draws step lines (capacity plots);
    ``split_axes`` gives the second series its own right-hand scale."""
    if not series:
        raise ConfigError("empty series list")
    mr = MR_SPLIT if split_axes else MR
    pw, ph = W - ML - mr, H - MT - MB
    xlo, xhi = _finite_range([s.x for s in series])

    groups: list[list[Series]]
    if split_axes and len(series) > 1:
        groups = [[series[0]], series[1:]]
    else:
        groups = [series]
    ranges = []
    for grp in groups:
        arrs = []
        for s in grp:
            arrs.append(s.mean)
            if s.std is not None:
                arrs.append(s.mean + np.nan_to_num(s.std))
                arrs.append(s.mean - np.nan_to_num(s.std))
        # the reference line never widens the scale; it only shows when data
        # already reaches it
        lo, hi = _finite_range(arrs)
        pad = 0.04 * (hi - lo)
        ranges.append((lo - pad, hi + pad))

    def sx(v: np.ndarray) -> np.ndarray:
        return ML + (np.asarray(v) - xlo) / (xhi - xlo) * pw

    def sy_of(rng):
        lo, hi = rng

        def sy(v: np.ndarray) -> np.ndarray:
            return MT + ph - (np.asarray(v) - lo) / (hi - lo) * ph
        return sy

    def pts(xs: np.ndarray, ys: np.ndarray) -> str:
        return " ".join(f"{px:.2f},{py:.2f}" for px, py in zip(xs, ys))

    def steppts(xs: np.ndarray, ys: np.ndarray) -> str:
        out = []
        for i in range(len(xs)):
            if i > 0:
                out.append(f"{xs[i]:.2f},{ys[i - 1]:.2f}")
            out.append(f"{xs[i]:.2f},{ys[i]:.2f}")
        return " ".join(out)

    o = ['<?xml version="1.0" encoding="UTF-8"?>',
         f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
         f'viewBox="0 0 {W} {H}">',
         f'<rect width="{W}" height="{H}" fill="white"/>']
    o.append(f'<text x="{W / 2:.0f}" y="20" text-anchor="middle" '
             f'font-family="sans-serif" font-size="14">{title}</text>')

    sy0 = sy_of(ranges[0])
    for tv in _ticks(xlo, xhi):
        px = float(sx(np.array([tv]))[0])
        o.append(f'<line x1="{px:.2f}" y1="{MT + ph}" x2="{px:.2f}" '
                 f'y2="{MT + ph + 4}" stroke="black"/>')
        o.append(f'<text x="{px:.2f}" y="{MT + ph + 17}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="11">{_fmt(tv)}</text>')
    for tv in _ticks(*ranges[0]):
        py = float(sy0(np.array([tv]))[0])
        o.append(f'<line x1="{ML - 4}" y1="{py:.2f}" x2="{ML}" y2="{py:.2f}" '
                 f'stroke="black"/>')
        o.append(f'<text x="{ML - 7}" y="{py + 4:.2f}" text-anchor="end" '
                 f'font-family="sans-serif" font-size="11">{_fmt(tv)}</text>')
    if split_axes and len(ranges) > 1:
        syr = sy_of(ranges[1])
        for tv in _ticks(*ranges[1]):
            py = float(syr(np.array([tv]))[0])
            o.append(f'<line x1="{ML + pw}" y1="{py:.2f}" x2="{ML + pw + 4}" '
                     f'y2="{py:.2f}" stroke="black"/>')
            o.append(f'<text x="{ML + pw + 7}" y="{py + 4:.2f}" '
                     f'text-anchor="start" font-family="sans-serif" '
                     f'font-size="11">{_fmt(tv)}</text>')
    o.append(f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" '
             f'stroke="black"/>')
    o.append(f'<text x="{ML + pw / 2:.0f}" y="{H - 10}" text-anchor="middle" '
             f'font-family="sans-serif" font-size="12">{xlabel}</text>')
    o.append(f'<text x="16" y="{MT + ph / 2:.0f}" text-anchor="middle" '
             f'font-family="sans-serif" font-size="12" '
             f'transform="rotate(-90 16 {MT + ph / 2:.0f})">{ylabel}</text>')

    lo0, hi0 = ranges[0]
    if ref_line is not None and lo0 <= ref_line <= hi0:
        py = float(sy0(np.array([ref_line]))[0])
        o.append(f'<line x1="{ML}" y1="{py:.2f}" x2="{ML + pw}" '
                 f'y2="{py:.2f}" stroke="#555555" stroke-dasharray="6,3"/>')
        o.append(f'<text x="{ML + pw - 4}" y="{py - 4:.2f}" text-anchor="end" '
                 f'font-family="sans-serif" font-size="10" '
                 f'fill="#555555">{_fmt(ref_line)}</text>')

    for gi, grp in enumerate(groups):
        sy = sy_of(ranges[gi])
        for s in grp:
            k = _stride(len(s.x))
            xs = s.x[::k]
            ms = s.mean[::k]
            if s.std is not None:
                sd = np.nan_to_num(s.std[::k])
                up, dn = ms + sd, ms - sd
                for seg in _segments(ms):
                    poly = (pts(sx(xs[seg]), sy(up[seg])) + " "
                            + pts(sx(xs[seg][::-1]), sy(dn[seg][::-1])))
                    o.append(f'<polygon points="{poly}" fill="{s.color}" '
                             f'fill-opacity="0.15" stroke="none"/>')
            dash = ' stroke-dasharray="7,4"' if s.dash else ""
            draw = steppts if staircase else pts
            for seg in _segments(ms):
                o.append(f'<polyline points="{draw(sx(xs[seg]), sy(ms[seg]))}" '
                         f'fill="none" stroke="{s.color}" '
                         f'stroke-width="1.4"{dash}/>')

    ly = MT + 8
    for s in series:
        o.append(f'<line x1="{ML + 8}" y1="{ly}" x2="{ML + 30}" y2="{ly}" '
                 f'stroke="{s.color}" stroke-width="2"'
                 + (' stroke-dasharray="7,4"' if s.dash else "") + "/>")
        o.append(f'<text x="{ML + 35}" y="{ly + 4}" font-family="sans-serif" '
                 f'font-size="11">{s.name}</text>')
        ly += 15
    o.append("</svg>")
    Path(path).write_text("\n".join(o) + "\n")
