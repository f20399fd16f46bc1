"""Minimal SVG charts: a bar chart and overlaid line curves."""
from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 320
MARGIN = dict(left=56, right=16, top=32, bottom=44)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def _n(x):
    return f"{x:.2f}"


def _frame(title, xlabel, ylabel):
    w, h = WIDTH, HEIGHT
    L, R, T, B = MARGIN["left"], MARGIN["right"], MARGIN["top"], MARGIN["bottom"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{L}" y1="{h - B}" x2="{w - R}" y2="{h - B}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{h - B}" stroke="black"/>',
        f'<text x="{(L + w - R) / 2}" y="{h - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{(T + h - B) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(T + h - B) / 2})">{escape(ylabel)}</text>',
    ]
    return parts


def _yticks(parts, ymax, to_y):
    L = MARGIN["left"]
    for k in range(5):
        v = ymax * k / 4
        y = to_y(v)
        parts.append(f'<line x1="{L - 4}" y1="{_n(y)}" x2="{L}" y2="{_n(y)}" stroke="black"/>')
        parts.append(f'<text x="{L - 6}" y="{_n(y + 4)}" text-anchor="end">{v:.3g}</text>')


def bar_chart(labels, values, title="", xlabel="", ylabel=""):
    w, h = WIDTH, HEIGHT
    L, R, T, B = MARGIN["left"], MARGIN["right"], MARGIN["top"], MARGIN["bottom"]
    parts = _frame(title, xlabel, ylabel)
    ymax = max(max(values, default=0.0), 1e-12)
    ymax = min(1.0, ymax * 1.1) if ymax <= 1.0 else ymax * 1.1

    def to_y(v):
        return h - B - (h - B - T) * v / ymax

    _yticks(parts, ymax, to_y)
    n = max(len(values), 1)
    slot = (w - L - R) / n
    for k, (lab, v) in enumerate(zip(labels, values)):
        x = L + k * slot + 0.15 * slot
        y = to_y(v)
        parts.append(f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(0.7 * slot)}" height="{_n(h - B - y)}" '
                     f'fill="{PALETTE[0]}"/>')
        parts.append(f'<text x="{_n(x + 0.35 * slot)}" y="{h - B + 14}" text-anchor="middle">{escape(str(lab))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_chart(curves, title="", xlabel="", ylabel=""):
    """``curves``: list of ``(label, xs, ys)``."""
    w, h = WIDTH, HEIGHT
    L, R, T, B = MARGIN["left"], MARGIN["right"], MARGIN["top"], MARGIN["bottom"]
    parts = _frame(title, xlabel, ylabel)
    curves = [c for c in curves if c is not None and len(c[1])]
    if not curves:
        parts.append(f'<text x="{w / 2}" y="{h / 2}" text-anchor="middle">no data</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"
    xmin = min(min(c[1]) for c in curves)
    xmax = max(max(c[1]) for c in curves)
    ymax = max(max(c[2]) for c in curves) * 1.1 or 1.0
    if xmax == xmin:
        xmax = xmin + 1.0

    def to_x(v):
        return L + (w - L - R) * (v - xmin) / (xmax - xmin)

    def to_y(v):
        return h - B - (h - B - T) * v / ymax

    _yticks(parts, ymax, to_y)
    for k in range(5):
        v = xmin + (xmax - xmin) * k / 4
        x = to_x(v)
        parts.append(f'<line x1="{_n(x)}" y1="{h - B}" x2="{_n(x)}" y2="{h - B + 4}" stroke="black"/>')
        parts.append(f'<text x="{_n(x)}" y="{h - B + 16}" text-anchor="middle">{v:.3g}</text>')
    for idx, (label, xs, ys) in enumerate(curves):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(f"{_n(to_x(x))},{_n(to_y(y))}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = T + 12 + 14 * idx
        parts.append(f'<line x1="{w - R - 90}" y1="{ly - 4}" x2="{w - R - 74}" y2="{ly - 4}" stroke="{color}" '
                     'stroke-width="2"/>')
        parts.append(f'<text x="{w - R - 70}" y="{ly}">{escape(str(label))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
