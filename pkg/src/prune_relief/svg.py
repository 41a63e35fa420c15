"""Minimal deterministic SVG line charts.

Charts are assembled from formatted strings only, so rerunning a report over
identical inputs rewrites byte-identical files. Matplotlib is deliberately
not used here: it stamps version and font metadata into its output.
"""

from pathlib import Path

_PALETTE = ["#1f6fb2", "#c2502a", "#3a8a4d", "#7a4fa3", "#8a6d1a", "#555555"]


def _fmt(v: float) -> str:
    return "%.6g" % v


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if n < 2:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def write_line_chart(path, xs, series: dict, title: str = "",
                     x_label: str = "", y_label: str = "", hline=None,
                     width: int = 640, height: int = 400) -> None:
    """Plot one or more named y-series over shared x values."""
    xs = [float(x) for x in xs]
    if not xs:
        raise ValueError("a chart needs at least one x value")
    for name, ys in series.items():
        if len(ys) != len(xs):
            raise ValueError(f"series {name!r} has {len(ys)} values for "
                             f"{len(xs)} x positions")
    all_y = [float(y) for ys in series.values() for y in ys]
    if hline is not None:
        all_y.append(float(hline))
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.06 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    ml, mr, mt, mb = 62, 16, 34, 44  # margins
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + pw * (x - x_lo) / (x_hi - x_lo)

    def py(y):
        return mt + ph * (1 - (y - y_lo) / (y_hi - y_lo))

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
               f'height="{height}" viewBox="0 0 {width} {height}">')
    out.append(f'<rect width="{width}" height="{height}" fill="#ffffff"/>')
    if title:
        out.append(f'<text x="{width / 2:g}" y="20" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="14">{title}</text>')
    # frame and ticks
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="#888888"/>')
    for t in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{_fmt(px(t))}" y1="{mt + ph}" '
                   f'x2="{_fmt(px(t))}" y2="{mt + ph + 4}" stroke="#888888"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{mt + ph + 16}" '
                   f'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{ml - 4}" y1="{_fmt(py(t))}" x2="{ml}" '
                   f'y2="{_fmt(py(t))}" stroke="#888888"/>')
        out.append(f'<text x="{ml - 7}" y="{_fmt(py(t) + 3)}" '
                   f'text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{_fmt(t)}</text>')
    if x_label:
        out.append(f'<text x="{ml + pw / 2:g}" y="{height - 8}" '
                   f'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{x_label}</text>')
    if y_label:
        out.append(f'<text x="14" y="{mt + ph / 2:g}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11" '
                   f'transform="rotate(-90 14 {mt + ph / 2:g})">{y_label}'
                   f'</text>')
    if hline is not None:
        y = _fmt(py(float(hline)))
        out.append(f'<line x1="{ml}" y1="{y}" x2="{ml + pw}" y2="{y}" '
                   f'stroke="#999999" stroke-dasharray="5,4"/>')
    for i, (name, ys) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(float(y)))}"
                       for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.6"/>')
        for x, y in zip(xs, ys):
            out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(float(y)))}" '
                       f'r="2.2" fill="{color}"/>')
        ly = mt + 14 + 15 * i
        out.append(f'<line x1="{ml + pw - 110}" y1="{ly - 4}" '
                   f'x2="{ml + pw - 92}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="1.6"/>')
        out.append(f'<text x="{ml + pw - 88}" y="{ly}" '
                   f'font-family="sans-serif" font-size="10">{name}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
