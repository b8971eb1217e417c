"""Static SVG renderings of the report tables.

Hand-written SVG keeps the output byte-deterministic and the geometry
testable: school positions are an affine map of (lon, lat) into the
viewport, the diverging color scale is anchored at zero and clamped at
+/-20 percentage points (values beyond render as crosses), and forest
rows carry an asterisk when the adjusted p-value clears the threshold.
Every figure also emits a CSV of exactly the values drawn.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

WIDTH, HEIGHT = 720, 460
PAD = 48
DIFF_CLAMP = 20.0  # percentage points


@dataclass(frozen=True)
class SchoolCoordinates:
    school_id: str
    lat: float
    lon: float


def read_coordinates(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != ["school_id", "lat", "lon"]:
        raise ValueError("coordinates header must be school_id,lat,lon")
    return [SchoolCoordinates(r[0], float(r[1]), float(r[2])) for r in rows[1:] if r]


def project(lat, lon, bbox, width=WIDTH, height=HEIGHT, pad=PAD):
    """Affine map of (lon, lat) into pixel coordinates.

    x grows with longitude, y grows downward as latitude falls:
      x = pad + (lon - lon_min) / (lon_max - lon_min) * (width - 2 pad)
      y = pad + (lat_max - lat) / (lat_max - lat_min) * (height - 2 pad)
    Degenerate ranges center the point.
    """
    lat_min, lat_max, lon_min, lon_max = bbox
    if lon_max > lon_min:
        x = pad + (lon - lon_min) / (lon_max - lon_min) * (width - 2 * pad)
    else:
        x = width / 2.0
    if lat_max > lat_min:
        y = pad + (lat_max - lat) / (lat_max - lat_min) * (height - 2 * pad)
    else:
        y = height / 2.0
    return x, y


def _bbox(coords):
    lats = [c.lat for c in coords]
    lons = [c.lon for c in coords]
    return min(lats), max(lats), min(lons), max(lons)


def _diverging_color(value, limit):
    """Blue below zero, white at zero, red above; clamped at +/-limit."""
    t = max(-1.0, min(1.0, value / limit))
    if t >= 0:
        r, g, b = 255, round(255 * (1 - t)), round(255 * (1 - t))
    else:
        r, g, b = round(255 * (1 + t)), round(255 * (1 + t)), 255
    return f"rgb({r},{g},{b})"


def _sequential_color(t):
    """0 -> pale yellow, 1 -> deep red."""
    t = max(0.0, min(1.0, t))
    return f"rgb({255},{round(235 * (1 - t) + 60 * t)},{round(150 * (1 - t))})"


def _svg(parts):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        + "\n".join(parts)
        + "\n</svg>\n"
    )


def _axes(title):
    return [
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" '
        f'stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
    ]


def _fmt(x):
    return f"{x:.3f}"


def heatmap_svg(cells, coords, year, value_of=None, diverging=False, title=None):
    """Circles positioned by school coordinates.

    cells: iterable with .school_id and a value (share by default).
    Schools without coordinates are skipped with a warning; the CSV
    emitted next to the figure still carries them.
    """
    coord_of = {c.school_id: c for c in coords}
    value_of = value_of or (lambda c: c.share)
    title = title or f"Negative share by school, {year}"
    parts = _axes(title)
    plotted = [c for c in cells if c.school_id in coord_of]
    skipped = [c.school_id for c in cells if c.school_id not in coord_of]
    if skipped:
        warnings.warn(f"no coordinates for {len(skipped)} school(s): "
                      f"{', '.join(sorted(skipped)[:5])}")
    if plotted:
        bbox = _bbox([coord_of[c.school_id] for c in plotted])
        for c in plotted:
            sc = coord_of[c.school_id]
            x, y = project(sc.lat, sc.lon, bbox)
            v = value_of(c)
            if diverging and abs(v) > DIFF_CLAMP:
                # out-of-range marker: a cross instead of a circle
                parts.append(
                    f'<g stroke="black" stroke-width="2">'
                    f'<line x1="{_fmt(x - 6)}" y1="{_fmt(y - 6)}" x2="{_fmt(x + 6)}" y2="{_fmt(y + 6)}"/>'
                    f'<line x1="{_fmt(x - 6)}" y1="{_fmt(y + 6)}" x2="{_fmt(x + 6)}" y2="{_fmt(y - 6)}"/>'
                    f'</g>'
                )
                continue
            color = _diverging_color(v, DIFF_CLAMP) if diverging else _sequential_color(v)
            parts.append(
                f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="7" fill="{color}" '
                f'stroke="black" stroke-width="0.5"/>'
            )
    return _svg(parts)


def heatmap_csv(cells, year):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["school_id", "year", "share"])
    for c in cells:
        w.writerow([c.school_id, year, repr(c.share)])
    return buf.getvalue()


def diffmap_csv(diffs, year):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["school_id", "year", "diff_points"])
    for school_id, y, d in diffs:
        if y == year:
            w.writerow([school_id, y, repr(d)])
    return buf.getvalue()


@dataclass(frozen=True)
class _DiffCell:
    school_id: str
    value: float


def diffmap_svg(diffs, coords, year):
    cells = [_DiffCell(school_id=s, value=d) for s, y, d in diffs if y == year]
    return heatmap_svg(cells, coords, year, value_of=lambda c: c.value,
                       diverging=True,
                       title=f"Change in negative share vs baseline, {year} (points)")


def histogram_svg(values_by_year, bins=12, title="Negative share across schools"):
    """Small-multiple histograms with median (dashed) and mean (solid) rules."""
    years = sorted(values_by_year)
    parts = [f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
             f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="15">{title}</text>']
    if not years:
        parts += _axes(title)[2:]
        return _svg(parts)
    cols = 2
    rows = (len(years) + cols - 1) // cols
    cell_w, cell_h = WIDTH / cols, (HEIGHT - 30) / rows
    for idx, year in enumerate(years):
        values = np.asarray(values_by_year[year], dtype=float)
        ox = (idx % cols) * cell_w + 36
        oy = 30 + (idx // cols) * cell_h + 12
        w, h = cell_w - 52, cell_h - 44
        parts.append(f'<text x="{_fmt(ox + w / 2)}" y="{_fmt(oy - 2)}" '
                     f'text-anchor="middle" font-size="12">{year}</text>')
        parts.append(f'<line x1="{_fmt(ox)}" y1="{_fmt(oy + h)}" x2="{_fmt(ox + w)}" '
                     f'y2="{_fmt(oy + h)}" stroke="black"/>')
        if len(values) == 0:
            continue
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            hi = lo + 1e-9
        counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
        peak = max(int(counts.max()), 1)
        for b in range(bins):
            x0 = ox + (edges[b] - lo) / (hi - lo) * w
            x1 = ox + (edges[b + 1] - lo) / (hi - lo) * w
            bar_h = counts[b] / peak * (h - 6)
            parts.append(
                f'<rect x="{_fmt(x0)}" y="{_fmt(oy + h - bar_h)}" '
                f'width="{_fmt(max(x1 - x0 - 1, 0.5))}" height="{_fmt(bar_h)}" '
                f'fill="steelblue"/>'
            )
        for stat, style in ((float(np.median(values)), 'stroke="blue" stroke-dasharray="4 3"'),
                            (float(values.mean()), 'stroke="red"')):
            sx = ox + (stat - lo) / (hi - lo) * w
            parts.append(f'<line x1="{_fmt(sx)}" y1="{_fmt(oy)}" x2="{_fmt(sx)}" '
                         f'y2="{_fmt(oy + h)}" {style}/>')
    return _svg(parts)


def forest_svg(or_table, adjusted, alpha=0.05, title="Odds ratios with 95% CI"):
    """One row per coefficient: point, whiskers, asterisk when the
    adjusted p-value is below alpha; vertical reference at OR = 1."""
    adj = dict(zip(adjusted.names, adjusted.values)) if adjusted is not None else {}
    rows = or_table.rows
    parts = _axes(title)
    if rows:
        finite_bounds = [v for r in rows for v in (r.ci_low, r.ci_high) if v is not None]
        lo = min(min(finite_bounds, default=1.0), 1.0) * 0.95
        hi = max(max(finite_bounds, default=1.0), 1.0) * 1.05
        span = hi - lo

        def sx(v):
            return PAD + (v - lo) / span * (WIDTH - 2 * PAD)

        parts.append(f'<line x1="{_fmt(sx(1.0))}" y1="{PAD}" x2="{_fmt(sx(1.0))}" '
                     f'y2="{HEIGHT - PAD}" stroke="gray" stroke-dasharray="3 3"/>')
        step = (HEIGHT - 2 * PAD) / (len(rows) + 1)
        for i, r in enumerate(rows):
            y = PAD + (i + 1) * step
            p_adj = adj.get(r.name)
            star = "*" if (p_adj is not None and p_adj < alpha) else ""
            parts.append(f'<text x="{PAD - 6}" y="{_fmt(y + 4)}" text-anchor="end" '
                         f'font-size="11">{r.name}{star}</text>')
            if r.ci_low is not None and r.ci_high is not None:
                parts.append(f'<line x1="{_fmt(sx(r.ci_low))}" y1="{_fmt(y)}" '
                             f'x2="{_fmt(sx(r.ci_high))}" y2="{_fmt(y)}" stroke="black"/>')
            parts.append(f'<circle cx="{_fmt(sx(r.odds_ratio))}" cy="{_fmt(y)}" r="4" '
                         f'fill="black"/>')
    return _svg(parts)


def emit_figures(share_table, or_table, adjusted, coords, out_dir, alpha=0.05):
    """Write all report figures and their CSV twins; returns paths."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        path = out_dir / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    years = sorted({c.year for c in share_table.cells})
    for year in years:
        cells = [c for c in share_table.cells if c.year == year]
        put(f"heatmap_{year}.svg", heatmap_svg(cells, coords, year))
        put(f"heatmap_{year}.csv", heatmap_csv(cells, year))
        if year != share_table.baseline_year:
            put(f"diff_{year}.svg", diffmap_svg(share_table.diffs, coords, year))
            put(f"diff_{year}.csv", diffmap_csv(share_table.diffs, year))
    values_by_year = {
        y: [c.share for c in share_table.cells if c.year == y] for y in years
    }
    put("hist.svg", histogram_svg(values_by_year))
    if or_table is not None:
        put("forest.svg", forest_svg(or_table, adjusted, alpha=alpha))
    return written
