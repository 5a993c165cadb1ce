"""Deterministic report writers: CSV, canonical JSON, and self-contained SVG.

Every file embeds the configuration hash and artifact version.  Floats are
rendered with shortest round-trip formatting, iteration orders are fixed, so
identical inputs always produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math


def format_value(v):
    if isinstance(v, float):
        # normalizes numpy scalars to the shortest round-trip float form
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, meta):
    """RFC-4180 style CSV preceded by one '#'-prefixed metadata line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"#config_hash={meta['config_hash']},version={meta['version']}\r\n")
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_json(path, payload, meta):
    data = {"config_hash": meta["config_hash"], "version": meta["version"], **payload}
    with open(path, "w") as fh:
        json.dump(data, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


_WIDTH, _HEIGHT = 800, 600
_MARGIN = 60


def _scale(points_x, points_y):
    lo_x, hi_x = min(points_x), max(points_x)
    lo_y, hi_y = min(points_y), max(points_y)
    if hi_x == lo_x:
        hi_x = lo_x + 1.0
    if hi_y == lo_y:
        hi_y = lo_y + 1.0

    def to_px(x, y):
        px = _MARGIN + (x - lo_x) / (hi_x - lo_x) * (_WIDTH - 2 * _MARGIN)
        py = _HEIGHT - _MARGIN - (y - lo_y) / (hi_y - lo_y) * (_HEIGHT - 2 * _MARGIN)
        return px, py

    return to_px, (lo_x, hi_x, lo_y, hi_y)


def scatter_svg(path, points, lines, meta, xlabel, ylabel, title):
    """Scatter plot with optional polyline overlays; one circle per point.

    ``points`` is a list of (x, y); ``lines`` maps a label to a list of
    (x, y) vertices drawn as a polyline.
    """
    finite = [(x, y) for x, y in points if math.isfinite(x) and math.isfinite(y)]
    all_x = [x for x, _ in finite] or [0.0, 1.0]
    all_y = [y for _, y in finite] or [0.0, 1.0]
    for pts in lines.values():
        all_x += [x for x, y in pts if math.isfinite(y)]
        all_y += [y for x, y in pts if math.isfinite(y)]
    to_px, _ = _scale(all_x, all_y)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}">',
        f"<desc>config_hash={meta['config_hash']} version={meta['version']}</desc>",
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH // 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<text x="{_WIDTH // 2}" y="{_HEIGHT - 16}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{_HEIGHT // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {_HEIGHT // 2})">{ylabel}</text>',
        f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
    ]
    colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"]
    for i, (label, pts) in enumerate(sorted(lines.items())):
        drawable = [(x, y) for x, y in pts if math.isfinite(y)]
        if len(drawable) < 2:
            continue
        coords = " ".join(
            f"{format_value(px)},{format_value(py)}" for px, py in (to_px(x, y) for x, y in drawable)
        )
        color = colors[i % len(colors)]
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        lx, ly = to_px(*drawable[-1])
        parts.append(
            f'<text x="{format_value(lx)}" y="{format_value(ly - 6)}" font-size="11" '
            f'fill="{color}">{label}</text>'
        )
    for x, y in points:
        if not (math.isfinite(x) and math.isfinite(y)):
            continue
        px, py = to_px(x, y)
        parts.append(f'<circle cx="{format_value(px)}" cy="{format_value(py)}" r="2" fill="#333333"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
