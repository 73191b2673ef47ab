"""Self-contained SVG 1.1 figures: allocation heatmaps, CDFs, timelines.

Output is byte-stable for identical input: coordinates are rounded to
fixed precision and colors come from a hash of the responder address.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence
from xml.sax.saxutils import escape

from .addr import LOW64_MASK, Ipv6Prefix, is_eui64_addr
from .probe import Observation

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 55
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


class FigureKind(str, enum.Enum):
    AllocationHeatmap = "AllocationHeatmap"
    CdfAllocBits = "CdfAllocBits"
    CdfPoolVsBgp = "CdfPoolVsBgp"
    CdfPrefixesPerIid = "CdfPrefixesPerIid"
    CdfHomogeneity = "CdfHomogeneity"
    IidTimeline = "IidTimeline"
    DensityByDay = "DensityByDay"


@dataclass
class FigureSpec:
    kind: FigureKind
    output: Path
    inputs: dict = field(default_factory=dict)
    title: str = ""


def responder_color(addr: int) -> str:
    """Stable 24-bit color for a responder; never black, which means no answer."""
    digest = hashlib.blake2b(addr.to_bytes(16, "big"), digest_size=3).digest()
    r, g, b = digest
    if r + g + b < 96:
        r, g, b = r | 0x40, g | 0x40, b | 0x40
    return "#%02x%02x%02x" % (r, g, b)


def _num(x: float) -> str:
    s = f"{x:.2f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def _svg(width: int, height: int, body: list[str], title: str = "") -> str:
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        head.append(
            f'<text x="{width // 2}" y="22" font-family="sans-serif" font-size="15" '
            f'text-anchor="middle">{escape(title)}</text>'
        )
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _no_data(title: str) -> str:
    return _svg(
        WIDTH,
        HEIGHT,
        [
            f'<text x="{WIDTH // 2}" y="{HEIGHT // 2}" font-family="sans-serif" font-size="18" '
            'text-anchor="middle" fill="#666666">no data</text>'
        ],
        title,
    )


# -- heatmap ------------------------------------------------------------------

def heatmap_grid(observations: Iterable[Observation], prefix48: Ipv6Prefix) -> list[list[Optional[int]]]:
    """256x256 responder grid: row = 7th address byte, column = 8th byte."""
    if prefix48.length != 48:
        raise ValueError("heatmaps cover exactly one /48")
    grid: list[list[Optional[int]]] = [[None] * 256 for _ in range(256)]
    for o in observations:
        if not prefix48.contains(o.target):
            continue
        subnet = (o.target >> 64) & 0xFFFF
        grid[subnet >> 8][subnet & 0xFF] = o.responder
    return grid


def heatmap_svg(observations: Iterable[Observation], prefix48: Ipv6Prefix, title: str = "", scale: int = 2) -> str:
    grid = heatmap_grid(observations, prefix48)
    if all(cell is None for row in grid for cell in row):
        return _no_data(title or str(prefix48))
    top = 30
    left = 40
    side = 256 * scale
    body = [f'<rect x="{left}" y="{top}" width="{side}" height="{side}" fill="#000000"/>']
    for y, row in enumerate(grid):
        x = 0
        while x < 256:
            r = row[x]
            end = x + 1
            while end < 256 and row[end] == r:
                end += 1
            if r is not None:
                body.append(
                    f'<rect x="{left + x * scale}" y="{top + y * scale}" width="{(end - x) * scale}" '
                    f'height="{scale}" fill="{responder_color(r)}"/>'
                )
            x = end
    body.append(
        f'<text x="{left + side // 2}" y="{top + side + 28}" font-family="sans-serif" font-size="12" '
        'text-anchor="middle">8th byte of target</text>'
    )
    body.append(
        f'<text x="14" y="{top + side // 2}" font-family="sans-serif" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + side // 2})">7th byte of target</text>'
    )
    return _svg(left + side + 20, top + side + 40, body, title or str(prefix48))


# -- CDFs ---------------------------------------------------------------------

def cdf_points(values: Iterable[float]) -> list[tuple[float, float]]:
    """Empirical CDF as (x, fraction <= x) at each distinct value."""
    ordered = sorted(values)
    n = len(ordered)
    points = []
    for i, v in enumerate(ordered):
        if i + 1 < n and ordered[i + 1] == v:
            continue
        points.append((v, (i + 1) / n))
    return points


def _axes(x0: float, x1: float, xlabel: str, ylabel: str, log_x: bool, x_ticks: Sequence[float]) -> list[str]:
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B
    out = [
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T + ph}" x2="{MARGIN_L + pw}" y2="{MARGIN_T + ph}" stroke="#000000"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{MARGIN_T + ph}" stroke="#000000"/>',
    ]
    for i in range(0, 5):
        f = i / 4
        y = MARGIN_T + ph * (1 - f)
        out.append(
            f'<text x="{MARGIN_L - 6}" y="{_num(y + 4)}" font-family="sans-serif" font-size="11" '
            f'text-anchor="end">{_num(f)}</text>'
        )
    for t in x_ticks:
        x = _sx(t, x0, x1, log_x)
        out.append(
            f'<text x="{_num(x)}" y="{MARGIN_T + ph + 16}" font-family="sans-serif" font-size="11" '
            f'text-anchor="middle">{_num(t)}</text>'
        )
    out.append(
        f'<text x="{MARGIN_L + pw // 2}" y="{HEIGHT - 12}" font-family="sans-serif" font-size="13" '
        f'text-anchor="middle">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{MARGIN_T + ph // 2}" font-family="sans-serif" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_T + ph // 2})">{escape(ylabel)}</text>'
    )
    return out


def _sx(v: float, x0: float, x1: float, log_x: bool) -> float:
    pw = WIDTH - MARGIN_L - MARGIN_R
    if log_x:
        v, x0, x1 = math.log10(max(v, 1e-9)), math.log10(max(x0, 1e-9)), math.log10(max(x1, 1e-9))
    span = (x1 - x0) or 1.0
    return MARGIN_L + pw * (v - x0) / span


def _sy(f: float) -> float:
    ph = HEIGHT - MARGIN_T - MARGIN_B
    return MARGIN_T + ph * (1 - f)


def _ticks(x0: float, x1: float, log_x: bool) -> list[float]:
    if log_x:
        lo, hi = math.floor(math.log10(max(x0, 1))), math.ceil(math.log10(max(x1, 1)))
        return [10.0 ** k for k in range(lo, hi + 1)]
    if x1 == x0:
        return [x0]
    step = (x1 - x0) / 5
    return [x0 + step * i for i in range(6)]


def cdf_svg(
    series: Mapping[str, Sequence[float]],
    xlabel: str,
    ylabel: str = "CDF",
    title: str = "",
    log_x: bool = False,
    x_range: Optional[tuple[float, float]] = None,
) -> str:
    """Step-CDF polylines, one per named series, with a legend."""
    series = {k: list(v) for k, v in series.items() if len(v)}
    if not series:
        return _no_data(title)
    allv = [v for vals in series.values() for v in vals]
    x0, x1 = x_range if x_range else (min(allv), max(allv))
    if log_x:
        x0 = max(x0, 1)
    body = _axes(x0, x1, xlabel, ylabel, log_x, _ticks(x0, x1, log_x))
    for idx, (name, vals) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        pts = [(_sx(x0, x0, x1, log_x), _sy(0.0))]
        prev_f = 0.0
        for x, f in cdf_points(vals):
            sx = _sx(x, x0, x1, log_x)
            pts.append((sx, _sy(prev_f)))
            pts.append((sx, _sy(f)))
            prev_f = f
        pts.append((_sx(x1, x0, x1, log_x), _sy(prev_f)))
        coords = " ".join(f"{_num(a)},{_num(b)}" for a, b in pts)
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = MARGIN_T + 14 + 16 * idx
        body.append(f'<line x1="{WIDTH - 170}" y1="{ly}" x2="{WIDTH - 150}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(
            f'<text x="{WIDTH - 144}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(name)}</text>'
        )
    return _svg(WIDTH, HEIGHT, body, title)


# -- timelines ----------------------------------------------------------------

def timeline_svg(points: Iterable[tuple[float, str]], xlabel: str = "day", title: str = "") -> str:
    """Scatter of (time, category) observations, one row per category."""
    pts = sorted(set(points))
    if not pts:
        return _no_data(title)
    cats = sorted({c for _, c in pts})
    x0, x1 = pts[0][0], max(p[0] for p in pts)
    ph = HEIGHT - MARGIN_T - MARGIN_B
    row_h = ph / max(1, len(cats))
    body = _axes(x0, x1, xlabel, "", False, _ticks(x0, x1, False))[:2]
    for t in _ticks(x0, x1, False):
        body.append(
            f'<text x="{_num(_sx(t, x0, x1, False))}" y="{MARGIN_T + ph + 16}" font-family="sans-serif" '
            f'font-size="11" text-anchor="middle">{_num(t)}</text>'
        )
    for i, c in enumerate(cats):
        y = MARGIN_T + row_h * (i + 0.5)
        body.append(
            f'<text x="{MARGIN_L - 6}" y="{_num(y + 4)}" font-family="sans-serif" font-size="11" '
            f'text-anchor="end">{escape(c)}</text>'
        )
    body.append(
        f'<text x="{MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) // 2}" y="{HEIGHT - 12}" font-family="sans-serif" '
        f'font-size="13" text-anchor="middle">{escape(xlabel)}</text>'
    )
    for x, c in pts:
        y = MARGIN_T + row_h * (cats.index(c) + 0.5)
        color = PALETTE[cats.index(c) % len(PALETTE)]
        body.append(f'<circle cx="{_num(_sx(x, x0, x1, False))}" cy="{_num(y)}" r="3" fill="{color}"/>')
    return _svg(WIDTH, HEIGHT, body, title)


def lines_svg(series: Mapping[str, Sequence[tuple[float, float]]], xlabel: str, ylabel: str, title: str = "") -> str:
    """Plain line chart of (x, y) series, e.g. EUI-64 count per /48 per hour."""
    series = {k: sorted(v) for k, v in series.items() if v}
    if not series:
        return _no_data(title)
    xs = [x for v in series.values() for x, _ in v]
    ys = [y for v in series.values() for _, y in v]
    x0, x1 = min(xs), max(xs)
    ymax = max(ys) or 1
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B
    body = _axes(x0, x1, xlabel, ylabel, False, _ticks(x0, x1, False))
    # relabel the y axis in data units
    body = [b for b in body if 'text-anchor="end"' not in b]
    for i in range(5):
        v = ymax * i / 4
        body.append(
            f'<text x="{MARGIN_L - 6}" y="{_num(MARGIN_T + ph * (1 - i / 4) + 4)}" font-family="sans-serif" '
            f'font-size="11" text-anchor="end">{_num(v)}</text>'
        )
    for idx, (name, pts) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        coords = " ".join(
            f"{_num(_sx(x, x0, x1, False))},{_num(MARGIN_T + ph * (1 - y / ymax))}" for x, y in pts
        )
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = MARGIN_T + 14 + 16 * idx
        body.append(f'<line x1="{MARGIN_L + pw - 190}" y1="{ly}" x2="{MARGIN_L + pw - 170}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(
            f'<text x="{MARGIN_L + pw - 164}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(name)}</text>'
        )
    return _svg(WIDTH, HEIGHT, body, title)


# -- dispatch -----------------------------------------------------------------

def render(spec: FigureSpec, data) -> str:
    """SVG text for ``spec`` from ``data`` (shape depends on the kind).

    AllocationHeatmap: observations; ``spec.inputs["prefix"]`` names the /48.
    CdfAllocBits / CdfHomogeneity / CdfPrefixesPerIid: sequence of numbers
    or a mapping of series name to numbers.  CdfPoolVsBgp: mapping with
    "pool" and "bgp" prefix lengths.  IidTimeline: (day, label) pairs.
    DensityByDay: mapping of series name to (hour, count) pairs.
    """
    kind = FigureKind(spec.kind)
    title = spec.title
    if kind is FigureKind.AllocationHeatmap:
        prefix = spec.inputs.get("prefix")
        if prefix is None:
            return _no_data(title)
        prefix = prefix if isinstance(prefix, Ipv6Prefix) else Ipv6Prefix.parse(prefix)
        return heatmap_svg(data or [], prefix, title)
    if kind is FigureKind.IidTimeline:
        return timeline_svg(data or [], "day", title)
    if kind is FigureKind.DensityByDay:
        return lines_svg(data or {}, "hour", "EUI-64 responders", title)
    series = data if isinstance(data, Mapping) else {"": list(data or [])}
    if kind is FigureKind.CdfAllocBits:
        return cdf_svg(series, "inferred allocation prefix length", title=title)
    if kind is FigureKind.CdfPoolVsBgp:
        return cdf_svg(series, "prefix length", title=title)
    if kind is FigureKind.CdfPrefixesPerIid:
        return cdf_svg(series, "distinct /64 prefixes per IID (log)", title=title, log_x=True)
    if kind is FigureKind.CdfHomogeneity:
        return cdf_svg(series, "homogeneity", title=title, x_range=(0.0, 1.0))
    raise ValueError(kind)


def emit_figure(spec: FigureSpec, data) -> Path:
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render(spec, data))
    return out


def prefixes_per_iid(observations: Iterable[Observation]) -> dict[int, int]:
    """Distinct WAN /64s per EUI-64 IID."""
    seen: dict[int, set[int]] = {}
    for o in observations:
        r = o.responder
        if r is not None and is_eui64_addr(r):
            seen.setdefault(r & LOW64_MASK, set()).add(r >> 64)
    return {iid: len(s) for iid, s in seen.items()}

