"""Minimal deterministic SVG line plots from CSV files."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=36, bottom=52)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _read(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def _num(text: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        return math.nan


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, t = [], start
    while t <= hi + 1e-12 * abs(hi):
        out.append(round(t, 12))
        t += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def render_plot(csv_path, columns, group: str | None = None, keep: dict | None = None,
                title: str | None = None, out=None) -> str:
    """Line plot of ``columns[1:]`` against ``columns[0]`` as SVG text.

    ``group`` splits rows into one series per distinct value of that column;
    ``keep`` maps column names to the values to retain.  Non-finite points are
    skipped.  An empty CSV yields a plot with axes only.
    """
    if len(columns) < 2:
        raise ValueError("need an x column and at least one y column")
    header, rows = _read(csv_path)
    missing = [c for c in list(columns) + ([group] if group else []) if c not in header]
    if header and missing:
        raise KeyError(f"columns not in {Path(csv_path).name}: {missing}")
    if keep:
        rows = [r for r in rows if all(r.get(k) in set(v) for k, v in keep.items())]
    xcol, ycols = columns[0], list(columns[1:])

    series: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        for yc in ycols:
            label = yc if not group else (f"{group} {r[group]}" if len(ycols) == 1
                                          else f"{yc} ({group} {r[group]})")
            x, y = _num(r[xcol]), _num(r[yc])
            pts = series.setdefault(label, [])
            if math.isfinite(x) and math.isfinite(y):
                pts.append((x, y))

    allpts = [p for pts in series.values() for p in pts]
    if allpts:
        x0, x1 = min(p[0] for p in allpts), max(p[0] for p in allpts)
        y0, y1 = min(p[1] for p in allpts), max(p[1] for p in allpts)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + (1 - (y - y0) / (y1 - y0)) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
             f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        parts.append(f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" '
                     f'font-size="14">{escape(title)}</text>')
    left, bottom = MARGIN["left"], MARGIN["top"] + ph
    parts.append(f'<rect x="{left}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
                 f'fill="none" stroke="black"/>')
    for t in _ticks(x0, x1):
        X = sx(t)
        parts.append(f'<line x1="{X:.2f}" y1="{bottom}" x2="{X:.2f}" y2="{bottom + 5}" '
                     f'stroke="black"/>')
        parts.append(f'<text x="{X:.2f}" y="{bottom + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        Y = sy(t)
        parts.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" '
                     f'stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">'
                 f'{escape(xcol)}</text>')
    ylabel = escape(", ".join(ycols))
    parts.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{ylabel}</text>')

    for k, (label, pts) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        if pts:
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            parts.append(f'<polyline class="series" data-label="{escape(label)}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = MARGIN["top"] + 14 + 14 * k
        parts.append(f'<text x="{left + pw - 6}" y="{ly}" text-anchor="end" '
                     f'fill="{color}">{escape(label)}</text>')
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if out is not None:
        Path(out).write_text(text)
    return text
