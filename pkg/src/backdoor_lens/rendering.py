"""Standalone SVG output for curves, sweep heatmaps and saliency grids.

Writers are deliberately dependency-free and deterministic: identical inputs
produce identical bytes, which keeps figures diffable and testable. Only a
small subset of SVG is used (lines, rects, polylines, text).
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .curves import LearningCurve
from .errors import ParameterError, ShapeError

_WIDTH = 640.0
_HEIGHT = 420.0
_FONT = 'font-family="Helvetica, Arial, sans-serif"'

# color ramps, light to dark; darker curves mean more poisoning
_BLUES = ((158, 202, 225), (8, 48, 107))
_ORANGES = ((253, 174, 107), (127, 39, 4))
_HEAT_LOW = (33, 102, 172)
_HEAT_HIGH = (178, 24, 43)


def _lerp_color(c0, c1, t: float) -> str:
    rgb = tuple(round(a + (b - a) * t) for a, b in zip(c0, c1))
    return "#%02x%02x%02x" % rgb


def _diverging(t: float) -> str:
    white = (247, 247, 247)
    if t < 0.5:
        return _lerp_color(_HEAT_LOW, white, 2.0 * t)
    return _lerp_color(white, _HEAT_HIGH, 2.0 * t - 1.0)


def _fmt(v: float) -> str:
    return "%.2f" % v


def _text(x: float, y: float, s: str, size: int = 11, anchor: str = "middle", extra: str = "") -> str:
    return (
        f'<text x="{_fmt(x)}" y="{_fmt(y)}" {_FONT} font-size="{size}" '
        f'text-anchor="{anchor}" {extra}>{s}</text>'
    )


def _header(title: str | None) -> list[str]:
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH:g}" '
        f'height="{_HEIGHT:g}" viewBox="0 0 {_WIDTH:g} {_HEIGHT:g}">',
        f'<rect x="0" y="0" width="{_WIDTH:g}" height="{_HEIGHT:g}" fill="#ffffff"/>',
    ]
    if title:
        lines.append(_text(_WIDTH / 2, 22, title, size=14))
    return lines


def render_curve_svg(
    curves: LearningCurve | Sequence[LearningCurve],
    path: str | Path,
    title: str | None = None,
) -> None:
    """Plot loss curves over beta: clean test dashed, triggered test solid.

    Accepts one curve or several; several are shaded light to dark by
    poisoning fraction (ties broken by lambda), so heavier poisoning reads
    darker. Every curve needs at least two points.
    """
    if isinstance(curves, LearningCurve):
        curves = [curves]
    curves = list(curves)
    if not curves:
        raise ParameterError("no curves to render")
    for c in curves:
        if len(c.points) < 2:
            raise ParameterError("curves need at least 2 points to draw")

    order = sorted(range(len(curves)), key=lambda i: (curves[i].fraction, curves[i].config.lam))
    left, right, top, bottom = 60.0, _WIDTH - 170.0, 42.0, _HEIGHT - 48.0
    span_x = right - left
    span_y = bottom - top

    y_max = max(max(p.loss_ts, p.loss_bt) for c in curves for p in c.points)
    y_max = y_max * 1.05 if y_max > 0 else 1.0

    def sx(beta: float) -> float:
        return left + beta * span_x

    def sy(loss: float) -> float:
        return bottom - (loss / y_max) * span_y

    lines = _header(title)
    # axes
    lines.append(
        f'<line x1="{_fmt(left)}" y1="{_fmt(bottom)}" x2="{_fmt(right)}" '
        f'y2="{_fmt(bottom)}" stroke="#333333" stroke-width="1"/>'
    )
    lines.append(
        f'<line x1="{_fmt(left)}" y1="{_fmt(top)}" x2="{_fmt(left)}" '
        f'y2="{_fmt(bottom)}" stroke="#333333" stroke-width="1"/>'
    )
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = sx(tick)
        lines.append(
            f'<line x1="{_fmt(x)}" y1="{_fmt(bottom)}" x2="{_fmt(x)}" '
            f'y2="{_fmt(bottom + 4)}" stroke="#333333" stroke-width="1"/>'
        )
        lines.append(_text(x, bottom + 16, "%g" % tick))
    for frac in np.linspace(0.0, 1.0, 5):
        y = bottom - frac * span_y
        lines.append(
            f'<line x1="{_fmt(left - 4)}" y1="{_fmt(y)}" x2="{_fmt(left)}" '
            f'y2="{_fmt(y)}" stroke="#333333" stroke-width="1"/>'
        )
        lines.append(_text(left - 8, y + 3.5, "%.3g" % (frac * y_max), anchor="end"))
    lines.append(_text((left + right) / 2, _HEIGHT - 14, "beta"))
    lines.append(_text(18, (top + bottom) / 2, "mean loss", extra='transform="rotate(-90 18 %s)"' % _fmt((top + bottom) / 2)))

    denom = max(len(curves) - 1, 1)
    legend_x = right + 14.0
    legend_y = top + 6.0
    for rank, idx in enumerate(order):
        c = curves[idx]
        t = rank / denom if len(curves) > 1 else 1.0
        col_bt = _lerp_color(*_BLUES, t)
        col_ts = _lerp_color(*_ORANGES, t)
        pts_ts = " ".join(f"{_fmt(sx(p.beta))},{_fmt(sy(p.loss_ts))}" for p in c.points)
        pts_bt = " ".join(f"{_fmt(sx(p.beta))},{_fmt(sy(p.loss_bt))}" for p in c.points)
        lines.append(
            f'<polyline points="{pts_ts}" fill="none" stroke="{col_ts}" '
            f'stroke-width="1.8" stroke-dasharray="6 4"/>'
        )
        lines.append(
            f'<polyline points="{pts_bt}" fill="none" stroke="{col_bt}" stroke-width="1.8"/>'
        )
        tag = f"p={c.fraction:g} λ={c.config.lam:g}"
        lines.append(
            f'<line x1="{_fmt(legend_x)}" y1="{_fmt(legend_y)}" x2="{_fmt(legend_x + 22)}" '
            f'y2="{_fmt(legend_y)}" stroke="{col_ts}" stroke-width="1.8" stroke-dasharray="6 4"/>'
        )
        lines.append(_text(legend_x + 28, legend_y + 3.5, f"clean {tag}", anchor="start"))
        legend_y += 16.0
        lines.append(
            f'<line x1="{_fmt(legend_x)}" y1="{_fmt(legend_y)}" x2="{_fmt(legend_x + 22)}" '
            f'y2="{_fmt(legend_y)}" stroke="{col_bt}" stroke-width="1.8"/>'
        )
        lines.append(_text(legend_x + 28, legend_y + 3.5, f"trigger {tag}", anchor="start"))
        legend_y += 20.0

    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _record_field(record, name: str):
    if isinstance(record, dict):
        return record.get(name)
    return getattr(record, name)


def render_heatmap_svg(
    records: Iterable,
    path: str | Path,
    x_field: str = "gamma",
    y_field: str = "lam",
    value_field: str = "acc_bt",
    title: str | None = None,
) -> None:
    """Draw a complete (x_field, y_field) grid of colored cells.

    records may be sweep records or plain dicts. Every (x, y) combination
    must appear exactly once with a non-missing value; holes and duplicates
    raise ShapeError naming the offending cells. Color runs blue (low)
    through white to red (high); a constant grid renders neutral with a
    single legend entry.
    """
    triples = []
    for r in records:
        x, y, v = (_record_field(r, f) for f in (x_field, y_field, value_field))
        if x is None or y is None:
            raise ShapeError(f"record lacks {x_field}/{y_field}: {r}")
        triples.append((float(x), float(y), None if v is None else float(v)))
    if not triples:
        raise ParameterError("no records to render")

    xs = sorted({t[0] for t in triples})
    ys = sorted({t[1] for t in triples})
    cells: dict[tuple[float, float], float] = {}
    problems = []
    for x, y, v in triples:
        if (x, y) in cells:
            problems.append(f"duplicate cell ({x_field}={x:g}, {y_field}={y:g})")
        elif v is None:
            problems.append(f"missing value at ({x_field}={x:g}, {y_field}={y:g})")
        else:
            cells[(x, y)] = v
    for x in xs:
        for y in ys:
            if (x, y) not in cells and not any(f"({x_field}={x:g}, {y_field}={y:g})" in p for p in problems):
                problems.append(f"hole at ({x_field}={x:g}, {y_field}={y:g})")
    if problems:
        shown = "; ".join(problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        raise ShapeError(f"grid is not complete: {shown}{more}")

    left, top = 90.0, 42.0
    plot_w, plot_h = _WIDTH - left - 120.0, _HEIGHT - top - 62.0
    cw, ch = plot_w / len(xs), plot_h / len(ys)
    vmin = min(cells.values())
    vmax = max(cells.values())
    flat = vmax == vmin

    lines = _header(title)
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            v = cells[(x, y)]
            t = 0.5 if flat else (v - vmin) / (vmax - vmin)
            cx = left + i * cw
            cy = top + (len(ys) - 1 - j) * ch
            lines.append(
                f'<rect x="{_fmt(cx)}" y="{_fmt(cy)}" width="{_fmt(cw)}" '
                f'height="{_fmt(ch)}" fill="{_diverging(t)}" stroke="#ffffff" stroke-width="0.5"/>'
            )
            if cw >= 42 and ch >= 16:
                shade = "#1a1a1a" if 0.2 < t < 0.8 else "#ffffff"
                lines.append(
                    _text(cx + cw / 2, cy + ch / 2 + 3.5, "%.2f" % v, size=10, extra=f'fill="{shade}"')
                )
    for i, x in enumerate(xs):
        step = 2 if len(xs) > 12 else 1
        if i % step:
            continue
        lines.append(_text(left + (i + 0.5) * cw, top + plot_h + 14, "%.3g" % x, size=10))
    for j, y in enumerate(ys):
        lines.append(
            _text(left - 6, top + (len(ys) - 1 - j + 0.5) * ch + 3.5, "%.3g" % y, size=10, anchor="end")
        )
    lines.append(_text(left + plot_w / 2, _HEIGHT - 16, x_field))
    lines.append(_text(24, top + plot_h / 2, y_field, extra='transform="rotate(-90 24 %s)"' % _fmt(top + plot_h / 2)))

    bar_x = left + plot_w + 26.0
    if flat:
        lines.append(
            f'<rect x="{_fmt(bar_x)}" y="{_fmt(top)}" width="16" height="16" fill="{_diverging(0.5)}" stroke="#333333" stroke-width="0.5"/>'
        )
        lines.append(_text(bar_x + 22, top + 12, "%.3g" % vmax, size=10, anchor="start"))
    else:
        steps = 24
        seg_h = plot_h / steps
        for s in range(steps):
            t = 1.0 - s / (steps - 1)
            lines.append(
                f'<rect x="{_fmt(bar_x)}" y="{_fmt(top + s * seg_h)}" width="16" '
                f'height="{_fmt(seg_h + 0.5)}" fill="{_diverging(t)}"/>'
            )
        lines.append(_text(bar_x + 22, top + 8, "%.3g" % vmax, size=10, anchor="start"))
        lines.append(_text(bar_x + 22, top + plot_h, "%.3g" % vmin, size=10, anchor="start"))
        lines.append(_text(bar_x + 8, top - 8, value_field, size=10))

    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_saliency_svg(matrix: np.ndarray, path: str | Path, title: str | None = None) -> None:
    """Grayscale tile plot of a 2-D magnitude map (dark = large)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ParameterError(f"saliency map must be a nonempty 2-D array, got shape {m.shape}")
    peak = float(np.abs(m).max())
    norm = np.abs(m) / peak if peak > 0 else np.zeros_like(m)
    h, w = m.shape
    left, top = 60.0, 42.0
    plot = min(_WIDTH - left - 60.0, _HEIGHT - top - 40.0)
    cell = plot / max(h, w)
    lines = _header(title)
    for i in range(h):
        for j in range(w):
            g = round(255 * (1.0 - norm[i, j]))
            lines.append(
                f'<rect x="{_fmt(left + j * cell)}" y="{_fmt(top + i * cell)}" '
                f'width="{_fmt(cell)}" height="{_fmt(cell)}" fill="#%02x%02x%02x"/>' % (g, g, g)
            )
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
