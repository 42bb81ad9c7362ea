"""Minimal SVG figures. Each figure embeds the CSV it was drawn from in a
``<metadata>`` CDATA block, recoverable with :func:`embedded_data`."""
from __future__ import annotations

import math
import re
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 480
PAD = 56

PALETTE = {
    "FeasibleUnique": "#3b6fb6",
    "StableFeasible": "#3a9a4a",
    "UnstableFeasible": "#d9534f",
    "InfeasibleRoot": "#bdbdbd",
    "NoRootFound": "#222222",
    "StabilityUndefined": "#f0ad4e",
}

_DATA_RE = re.compile(r"<metadata id=\"data\"><!\[CDATA\[(.*?)\]\]></metadata>", re.S)


def _frame(title, body, data_csv, xlabel, ylabel):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
        f'<metadata id="data"><![CDATA[{data_csv}]]></metadata>\n'
        f'<rect width="{W}" height="{H}" fill="white"/>\n'
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>\n'
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>\n'
        f'<text x="16" y="{H / 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>\n'
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>\n'
        f"{body}</svg>\n"
    )


class _Scale:
    def __init__(self, lo, hi, a, b):
        if not hi > lo:
            hi = lo + 1.0
        self.lo, self.hi, self.a, self.b = lo, hi, a, b

    def __call__(self, x):
        return self.a + (x - self.lo) / (self.hi - self.lo) * (self.b - self.a)


def _ticks(sx, sy, xlo, xhi, ylo, yhi):
    out = []
    for t in np.linspace(xlo, xhi, 5):
        out.append(f'<text x="{sx(t):.1f}" y="{H - PAD + 16}" text-anchor="middle" font-size="11">{t:.3g}</text>')
    for t in np.linspace(ylo, yhi, 5):
        out.append(f'<text x="{PAD - 6}" y="{sy(t) + 4:.1f}" text-anchor="end" font-size="11">{t:.3g}</text>')
    return "\n".join(out) + "\n"


def _polyline(points, color, dash=None):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>\n'


def heatmap(grid, data_csv, title=None):
    """Verdict map of a scan with the analytic curve v = R(r) overlaid."""
    from .equilibrium import threshold_R

    r, v = grid.r_axis, grid.v_axis
    rlo, rhi = float(r[0]), float(r[-1])
    vlo, vhi = float(v[0]), float(v[-1])
    dr = (rhi - rlo) / max(len(r) - 1, 1) or 1.0
    dv = (vhi - vlo) / max(len(v) - 1, 1) or 1.0
    sx = _Scale(rlo - dr / 2, rhi + dr / 2, PAD, W - PAD)
    sy = _Scale(vlo - dv / 2, vhi + dv / 2, H - PAD, PAD)
    cw = abs(sx(rlo + dr) - sx(rlo)) + 0.3
    ch = abs(sy(vlo + dv) - sy(vlo)) + 0.3
    parts = []
    for i, vv in enumerate(v):
        for j, rr in enumerate(r):
            color = PALETTE.get(grid.verdict[i, j], "#ff00ff")
            parts.append(
                f'<rect x="{sx(rr) - cw / 2:.2f}" y="{sy(vv) - ch / 2:.2f}" '
                f'width="{cw:.2f}" height="{ch:.2f}" fill="{color}"/>'
            )
    body = "\n".join(parts) + "\n"
    rs = np.linspace(rlo, rhi, 200)
    curve = [(sx(x), sy(threshold_R(x))) for x in rs if vlo - dv / 2 <= threshold_R(x) <= vhi + dv / 2]
    if len(curve) > 1:
        body += _polyline(curve, "red")
    body += _ticks(sx, sy, rlo, rhi, vlo, vhi)
    return _frame(title or f"{grid.kind} scan", body, data_csv, "r", "v")


def line_plot(x, series, data_csv, title="", xlabel="n", ylabel=""):
    """``series`` maps label -> (values, color, dash or None)."""
    x = np.asarray(x, dtype=float)
    vals = [np.asarray(s[0], dtype=float) for s in series.values()]
    finite = np.concatenate([a[np.isfinite(a)] for a in vals]) if vals else np.zeros(1)
    ylo, yhi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    sx = _Scale(float(x[0]), float(x[-1]), PAD, W - PAD)
    sy = _Scale(ylo, yhi, H - PAD, PAD)
    body = ""
    for k, (label, (values, color, dash)) in enumerate(series.items()):
        pts = [(sx(a), sy(b)) for a, b in zip(x, values) if math.isfinite(b)]
        body += _polyline(pts, color, dash)
        body += f'<text x="{W - PAD - 4}" y="{PAD + 16 + 14 * k}" text-anchor="end" font-size="11" fill="{color}">{escape(label)}</text>\n'
    body += _ticks(sx, sy, float(x[0]), float(x[-1]), ylo, yhi)
    return _frame(title, body, data_csv, xlabel, ylabel)


def histogram_overlay(edges, density, model_x, model_pdf, data_csv, title=""):
    edges = np.asarray(edges, dtype=float)
    density = np.asarray(density, dtype=float)
    top = max(float(density.max()) if density.size else 1.0, float(np.max(model_pdf)) if len(model_pdf) else 0.0)
    sx = _Scale(float(edges[0]), float(edges[-1]), PAD, W - PAD)
    sy = _Scale(0.0, top, H - PAD, PAD)
    parts = []
    for a, b, d in zip(edges[:-1], edges[1:], density):
        parts.append(
            f'<rect x="{sx(a):.2f}" y="{sy(d):.2f}" width="{sx(b) - sx(a):.2f}" '
            f'height="{sy(0) - sy(d):.2f}" fill="#c8c8c8"/>'
        )
    body = "\n".join(parts) + "\n"
    body += _polyline([(sx(a), sy(b)) for a, b in zip(model_x, model_pdf) if math.isfinite(b)], "red")
    body += _ticks(sx, sy, float(edges[0]), float(edges[-1]), 0.0, top)
    return _frame(title, body, data_csv, "x", "density")


def embedded_data(svg_text):
    m = _DATA_RE.search(svg_text)
    if m is None:
        raise ValueError("no embedded data block")
    return m.group(1)
