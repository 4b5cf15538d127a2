"""Self-contained log-log SVG line charts.

Output depends only on the data, so identical inputs give byte-identical
files.
"""

from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 80, 150, 40, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _decades(lo, hi):
    return range(math.floor(math.log10(lo)), math.ceil(math.log10(hi)) + 1)


def _pts(points):
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in points)


def line_chart(series, title, xlabel, ylabel, markers=()):
    """Render ``series`` on log-log axes.

    ``series`` holds dicts with ``name``, ``x``, ``y`` and optional
    ``dashed``; points with non-positive or missing values are skipped.
    ``markers`` holds dicts with ``x``, ``y`` and ``label``.
    """
    clean = []
    for s in series:
        pairs = [(x, y) for x, y in zip(s["x"], s["y"])
                 if x is not None and y is not None and x > 0 and y > 0
                 and math.isfinite(x) and math.isfinite(y)]
        if pairs:
            clean.append((s, pairs))
    if not clean:
        raise ValueError("nothing to plot: every series is empty")

    xs = [x for _, p in clean for x, _ in p]
    ys = [y for _, p in clean for _, y in p]
    dx = list(_decades(min(xs), max(xs)))
    dy = list(_decades(min(ys), max(ys)))
    if len(dx) < 2:
        dx.append(dx[0] + 1)
    if len(dy) < 2:
        dy.append(dy[0] + 1)
    x0, x1 = dx[0], dx[-1]
    y0, y1 = dy[0], dy[-1]
    pw = WIDTH - LEFT - RIGHT
    ph = HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (math.log10(x) - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + ph - (math.log10(y) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for e in dx:
        x = px(10.0**e)
        out.append(f'<line x1="{x:.2f}" y1="{TOP}" x2="{x:.2f}" y2="{TOP + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.2f}" y="{TOP + ph + 16}" text-anchor="middle">1e{e}</text>')
    for e in dy:
        y = py(10.0**e)
        out.append(f'<line x1="{LEFT}" y1="{y:.2f}" x2="{LEFT + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 16}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="18" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {TOP + ph / 2:.2f})">{escape(ylabel)}</text>'
    )

    for i, (s, pairs) in enumerate(clean):
        color = COLORS[i % len(COLORS)]
        dash = ' stroke-dasharray="6,4"' if s.get("dashed") else ""
        pts = [(px(x), py(y)) for x, y in pairs]
        out.append(
            f'<polyline data-series="{escape(s["name"])}" fill="none" stroke="{color}" '
            f'stroke-width="2"{dash} points="{_pts(pts)}"/>'
        )
        ly = TOP + 14 + 18 * i
        out.append(f'<line x1="{LEFT + pw + 10}" y1="{ly}" x2="{LEFT + pw + 34}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{LEFT + pw + 40}" y="{ly + 4}">{escape(s["name"])}</text>')

    for m in markers:
        cx, cy = px(m["x"]), py(m["y"])
        out.append(f'<circle data-marker="{escape(m["label"])}" data-x="{m["x"]!r}" data-y="{m["y"]!r}" '
                   f'cx="{cx:.2f}" cy="{cy:.2f}" r="5" fill="none" stroke="black"/>')
        out.append(f'<text x="{cx + 8:.2f}" y="{cy - 8:.2f}">{escape(m["label"])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def emit_plots(out_dir, summary=None, curves=None, critical=None):
    """Write the sweep and bound charts that the given tables support.

    ``summary`` is a list of sweep summary rows, ``curves`` a list of curve
    rows, ``critical`` an optional ``(b, sfo)`` to annotate on the SFO chart.
    Returns the written paths.
    """
    if not summary and not curves:
        raise ValueError("emit_plots needs at least one non-empty table")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if summary:
        b = [r.b for r in summary]
        k = [r.K_median for r in summary]
        series = [{"name": "measured K", "x": b, "y": k}]
        first = next((r for r in summary if r.K_median), None)
        if first is not None:
            series.append({
                "name": "perfect scaling",
                "x": b,
                "y": [first.K_median * first.b / x for x in b],
                "dashed": True,
            })
        written.append(_write(os.path.join(out_dir, "steps_vs_batch.svg"),
                              line_chart(series, "Steps to threshold", "batch size b", "steps K")))
        markers = []
        if critical is not None:
            markers.append({"x": critical[0], "y": critical[1], "label": f"critical b = {critical[0]:g}"})
        written.append(_write(
            os.path.join(out_dir, "sfo_vs_batch.svg"),
            line_chart([{"name": "measured Kb", "x": b, "y": [r.sfo_median for r in summary]}],
                       "SFO complexity", "batch size b", "K b", markers),
        ))
    if curves:
        b = [r.b for r in curves]
        written.append(_write(
            os.path.join(out_dir, "bound_steps.svg"),
            line_chart([{"name": "k_lower", "x": b, "y": [r.k_lower for r in curves]},
                        {"name": "k_upper", "x": b, "y": [r.k_upper for r in curves]}],
                       "Step bounds", "batch size b", "K(b)"),
        ))
        written.append(_write(
            os.path.join(out_dir, "bound_sfo.svg"),
            line_chart([{"name": "sfo_lower", "x": b, "y": [r.sfo_lower for r in curves]},
                        {"name": "sfo_upper", "x": b, "y": [r.sfo_upper for r in curves]}],
                       "SFO bounds", "batch size b", "K(b) b"),
        ))
    return written
