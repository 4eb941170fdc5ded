"""Deterministic SVG line and scatter plots.

Output depends only on the input numbers: coordinates are written with a
fixed number of digits and elements appear in input order.
"""

from dataclasses import dataclass, field
import math

WIDTH, HEIGHT = 480, 320
MARGIN = (56, 20, 24, 44)  # left, right, top, bottom
PALETTE = ("#1f4e79", "#b03a2e", "#1e8449", "#7d3c98", "#b9770e", "#117a65")


@dataclass
class Series:
    label: str
    x: list
    y: list
    err: list = None
    style: str = "line"  # "line", "scatter" or "both"


@dataclass
class Plot:
    title: str
    xlabel: str = ""
    ylabel: str = ""
    logy: bool = False
    series: list = field(default_factory=list)


def _num(v):
    return f"{v:.2f}"


def _esc(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def _points(plot):
    """Finite (x, y, err) triples of every series, y mapped to log10 when asked."""
    out = []
    for s in plot.series:
        err = s.err if s.err is not None else [0.0] * len(s.x)
        pts = []
        for x, y, e in zip(s.x, s.y, err):
            x, y, e = float(x), float(y), abs(float(e))
            if plot.logy:
                if y <= 0:
                    continue
                lo = math.log10(y - e) if y - e > 0 else math.log10(y)
                pts.append((x, math.log10(y), lo, math.log10(y + e)))
            else:
                pts.append((x, y, y - e, y + e))
            if not all(map(math.isfinite, pts[-1])):
                pts.pop()
        out.append(pts)
    return out


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9)
    ticks = []
    k = first
    while k * step <= hi + 1e-9 * step:
        ticks.append(k * step)
        k += 1
    return ticks


def _label(v):
    return f"{v:.4g}"


def render_svg(plot):
    """SVG text for a plot; a plot without finite points shows empty axes."""
    left, right, top, bottom = MARGIN
    x0, x1 = left, WIDTH - right
    y0, y1 = HEIGHT - bottom, top
    pts = _points(plot)
    flat = [p for s in pts for p in s]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
             f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
             f'<text x="{WIDTH / 2:.2f}" y="14" text-anchor="middle" font-size="13">'
             f'{_esc(plot.title)}</text>',
             f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
             f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
             f'<text x="{(x0 + x1) / 2:.2f}" y="{HEIGHT - 8}" text-anchor="middle">'
             f'{_esc(plot.xlabel)}</text>',
             f'<text x="14" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" '
             f'transform="rotate(-90 14 {(y0 + y1) / 2:.2f})">{_esc(plot.ylabel)}</text>']
    if flat:
        xs = [p[0] for p in flat]
        ys = [v for p in flat for v in p[1:]]
        xlo, xhi = min(xs), max(xs)
        ylo, yhi = min(ys), max(ys)
        if xhi == xlo:
            xlo, xhi = xlo - 1, xhi + 1
        if yhi == ylo:
            pad = abs(ylo) * 0.1 or 1.0
            ylo, yhi = ylo - pad, yhi + pad
        pad = 0.05 * (yhi - ylo)
        ylo, yhi = ylo - pad, yhi + pad

        def sx(x):
            return x0 + (x - xlo) / (xhi - xlo) * (x1 - x0)

        def sy(y):
            return y0 + (y - ylo) / (yhi - ylo) * (y1 - y0)

        for t in _ticks(xlo, xhi):
            parts.append(f'<line x1="{_num(sx(t))}" y1="{y0}" x2="{_num(sx(t))}" y2="{y0 + 4}" '
                         f'stroke="black"/>')
            parts.append(f'<text x="{_num(sx(t))}" y="{y0 + 15}" text-anchor="middle">'
                         f'{_label(t)}</text>')
        for t in _ticks(ylo, yhi):
            text = f"1e{t:.3g}" if plot.logy else _label(t)
            parts.append(f'<line x1="{x0 - 4}" y1="{_num(sy(t))}" x2="{x0}" y2="{_num(sy(t))}" '
                         f'stroke="black"/>')
            parts.append(f'<text x="{x0 - 6}" y="{_num(sy(t) + 4)}" text-anchor="end">'
                         f'{_esc(text)}</text>')
        for j, (s, sp) in enumerate(zip(plot.series, pts)):
            colour = PALETTE[j % len(PALETTE)]
            if s.style in ("line", "both") and len(sp) > 1:
                path = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y, _, _ in sp)
                parts.append(f'<polyline points="{path}" fill="none" stroke="{colour}" '
                             f'stroke-width="1.5"/>')
            for x, y, lo, hi in sp:
                if s.err is not None and hi > lo:
                    parts.append(f'<line x1="{_num(sx(x))}" y1="{_num(sy(lo))}" '
                                 f'x2="{_num(sx(x))}" y2="{_num(sy(hi))}" stroke="{colour}"/>')
                if s.style in ("scatter", "both"):
                    parts.append(f'<circle cx="{_num(sx(x))}" cy="{_num(sy(y))}" r="2.5" '
                                 f'fill="{colour}"/>')
            parts.append(f'<text x="{x1 - 4}" y="{top + 14 * (j + 1)}" text-anchor="end" '
                         f'fill="{colour}">{_esc(s.label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(plot, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_svg(plot))
    return path
