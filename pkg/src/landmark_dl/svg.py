"""Dependency-free SVG rendering of simplex summaries and threshold curves.

Output is a pure function of the inputs with fixed number formatting, so
identical inputs give byte-identical files.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .inference import VERTICES, barycentric_to_xy, clip_to_simplex

WIDTH, HEIGHT = 800, 700
ARM_COLORS = {0: "#1f5fa8", 1: "#c2401c"}


def _f(v):
    return f"{v:.3f}"


def _header():
    return [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
            f'width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']


def render_simplex(arms, title="") -> tuple[str, int]:
    """Simplex with one point and one confidence polygon per arm.

    ``arms`` is a sequence of dicts with keys ``arm``, ``point`` (``Q0, Q1,
    QD``) and optionally ``region`` (rows of ``Q0, Q1, QD``). Returns the SVG
    text and the number of coordinates clipped into the simplex.
    """
    out = _header()
    clipped = 0
    tri = " ".join(f"{_f(x)},{_f(y)}" for x, y in VERTICES)
    out.append(f'<polygon points="{tri}" fill="none" stroke="black" stroke-width="1.5"/>')
    # grid lines at 0.2 steps parallel to each side
    for k in range(1, 5):
        c = k / 5
        for i, j, m in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            a = np.zeros(3)
            b = np.zeros(3)
            a[m] = b[m] = c
            a[i], b[j] = 1 - c, 1 - c
            (x1, y1), (x2, y2) = barycentric_to_xy(np.vstack([a, b]))
            out.append(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                       'stroke="#dddddd" stroke-width="0.8"/>')
    labels = (("Q0 = 1", VERTICES[0] + (-10, 28), "end"), ("Q1 = 1", VERTICES[1] + (10, 28), "start"),
              ("QD = 1", VERTICES[2] + (0, -14), "middle"))
    for text, (x, y), anchor in labels:
        out.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="18" text-anchor="{anchor}">{text}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2:.3f}" y="40.000" font-size="20" '
                   f'text-anchor="middle">{escape(title)}</text>')
    for k, arm in enumerate(sorted(arms, key=lambda d: d["arm"])):
        color = ARM_COLORS.get(arm["arm"], "#333333")
        if arm.get("region") is not None and len(arm["region"]):
            reg, c = clip_to_simplex(arm["region"])
            clipped += c
            pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in barycentric_to_xy(reg))
            out.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.18" '
                       f'stroke="{color}" stroke-width="1.2"/>')
        p, c = clip_to_simplex(arm["point"])
        clipped += c
        (x, y), = barycentric_to_xy(p)
        out.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="5" fill="{color}"/>')
        out.append(f'<text x="{_f(620)}" y="{_f(80 + 24 * k)}" font-size="16" fill="{color}">'
                   f'A = {int(arm["arm"])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n", clipped


def render_curve(rows, xlabel="y", ylabel="eta_1(y) - eta_0(y)") -> str:
    """Pointwise estimate and confidence band of a threshold curve.

    ``rows`` are ``(y, estimate, ci_low, ci_high)`` tuples.
    """
    rows = np.asarray(rows, dtype=float).reshape(-1, 4)
    x0, x1, y0, y1 = 90.0, 760.0, 620.0, 60.0
    ys, est, lo, hi = rows.T
    xmin, xmax = float(ys.min()), float(ys.max())
    if xmax == xmin:
        xmax = xmin + 1.0
    vmin = float(min(lo.min(), 0.0))
    vmax = float(max(hi.max(), 0.0))
    if vmax == vmin:
        vmax = vmin + 1.0

    def X(v):
        return x0 + (v - xmin) / (xmax - xmin) * (x1 - x0)

    def Y(v):
        return y0 + (v - vmin) / (vmax - vmin) * (y1 - y0)

    out = _header()
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x1)}" y2="{_f(y0)}" stroke="black"/>')
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x0)}" y2="{_f(y1)}" stroke="black"/>')
    out.append(f'<line x1="{_f(x0)}" y1="{_f(Y(0))}" x2="{_f(x1)}" y2="{_f(Y(0))}" '
               'stroke="#888888" stroke-dasharray="4,4"/>')
    band = [(X(a), Y(b)) for a, b in zip(ys, hi)] + [(X(a), Y(b)) for a, b in zip(ys[::-1], lo[::-1])]
    out.append('<polygon points="' + " ".join(f"{_f(a)},{_f(b)}" for a, b in band)
               + '" fill="#1f5fa8" fill-opacity="0.2" stroke="none"/>')
    out.append('<polyline points="' + " ".join(f"{_f(X(a))},{_f(Y(b))}" for a, b in zip(ys, est))
               + '" fill="none" stroke="#1f5fa8" stroke-width="2"/>')
    for v in np.linspace(xmin, xmax, 6):
        out.append(f'<text x="{_f(X(v))}" y="{_f(y0 + 22)}" font-size="13" '
                   f'text-anchor="middle">{v:.4g}</text>')
    for v in np.linspace(vmin, vmax, 6):
        out.append(f'<text x="{_f(x0 - 8)}" y="{_f(Y(v) + 4)}" font-size="13" '
                   f'text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{_f((x0 + x1) / 2)}" y="{_f(y0 + 50)}" font-size="16" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="{_f(20)}" y="{_f(40)}" font-size="16">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
