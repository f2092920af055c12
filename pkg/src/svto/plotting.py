"""Static SVG figures: convergence curves and executed MPC paths.

Written as plain SVG text so the package needs no plotting library.  Each
data series is a ``<polyline>`` inside the plot area; the area's data range
is recorded in ``data-xrange``/``data-yrange`` attributes of the ``<svg>``
element so the figures can be checked programmatically.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

log = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 480
MARGIN = (60, 20, 30, 50)  # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


class _Axes:
    """Affine map from a data box to the plot area (y up)."""

    def __init__(self, xlim, ylim, equal: bool = False):
        x0, x1 = _pad(*xlim)
        y0, y1 = _pad(*ylim)
        left, right, top, bottom = MARGIN
        self.pw = WIDTH - left - right
        self.ph = HEIGHT - top - bottom
        if equal:
            s = min(self.pw / (x1 - x0), self.ph / (y1 - y0))
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            x0, x1 = cx - 0.5 * self.pw / s, cx + 0.5 * self.pw / s
            y0, y1 = cy - 0.5 * self.ph / s, cy + 0.5 * self.ph / s
        self.xlim, self.ylim = (x0, x1), (y0, y1)

    def x(self, v):
        return MARGIN[0] + (np.asarray(v, float) - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * self.pw

    def y(self, v):
        return MARGIN[2] + (self.ylim[1] - np.asarray(v, float)) / (self.ylim[1] - self.ylim[0]) * self.ph

    def scale(self, r: float) -> float:
        return r / (self.xlim[1] - self.xlim[0]) * self.pw

    def header(self, title: str) -> list[str]:
        left, _, top, _ = MARGIN
        return [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" data-xrange="{self.xlim[0]:.6g} {self.xlim[1]:.6g}" '
            f'data-yrange="{self.ylim[0]:.6g} {self.ylim[1]:.6g}">',
            '<rect width="100%" height="100%" fill="white"/>',
            f'<text x="{WIDTH / 2:.1f}" y="{top - 10}" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<rect class="plot-area" x="{left}" y="{top}" width="{self.pw}" height="{self.ph}" '
            'fill="none" stroke="black"/>',
        ]

    def ticks(self, xlabel: str, ylabel: str) -> list[str]:
        out = []
        bottom = MARGIN[2] + self.ph
        for v in np.linspace(*self.xlim, 5):
            out.append(f'<text x="{self.x(v):.1f}" y="{bottom + 15}" text-anchor="middle" '
                       f'font-size="10">{v:.3g}</text>')
        for v in np.linspace(*self.ylim, 5):
            out.append(f'<text x="{MARGIN[0] - 5}" y="{self.y(v):.1f}" text-anchor="end" '
                       f'font-size="10">{v:.3g}</text>')
        out.append(f'<text x="{MARGIN[0] + self.pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" '
                   f'font-size="12">{escape(xlabel)}</text>')
        out.append(f'<text x="15" y="{MARGIN[2] + self.ph / 2:.1f}" font-size="12" '
                   f'transform="rotate(-90 15 {MARGIN[2] + self.ph / 2:.1f})" text-anchor="middle">'
                   f'{escape(ylabel)}</text>')
        return out


def _pad(lo: float, hi: float) -> tuple[float, float]:
    if not np.isfinite(lo) or not np.isfinite(hi):
        return 0.0, 1.0
    if hi - lo < 1e-12 * max(1.0, abs(lo)):
        d = max(1.0, abs(lo)) * 0.05
        return lo - d, hi + d
    d = 0.05 * (hi - lo)
    return lo - d, hi + d


def _points(xs, ys) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))


def _legend(names: Sequence[str]) -> list[str]:
    out = []
    x = MARGIN[0] + 10
    for i, name in enumerate(names):
        y = MARGIN[2] + 15 + 15 * i
        c = COLORS[i % len(COLORS)]
        out.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 20}" y2="{y - 4}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{x + 25}" y="{y}" font-size="11">{escape(name)}</text>')
    return out


def plot_convergence(traces: Mapping[str, Sequence[Sequence[float]]], title: str = "Convergence") -> str:
    """Iteration vs mean best-mode cost, one polyline per solver.

    ``traces[solver]`` holds one cost trace per seed; traces are averaged
    over seeds (truncated to the shortest).  Empty traces are skipped.
    """
    series: dict[str, np.ndarray] = {}
    for name, runs in traces.items():
        runs = [np.asarray(r, float) for r in runs if len(r)]
        if not runs:
            log.warning("no cost trace for %s; skipping it in the convergence plot", name)
            continue
        n = min(r.size for r in runs)
        series[name] = np.mean([r[:n] for r in runs], axis=0)
    finite = [s[np.isfinite(s)] for s in series.values()]
    vals = np.concatenate(finite) if finite else np.zeros(0)
    n_max = max((s.size for s in series.values()), default=1)
    ax = _Axes((0, max(n_max - 1, 1)), (vals.min(), vals.max()) if vals.size else (0.0, 1.0))
    out = ax.header(title)
    for i, (name, s) in enumerate(series.items()):
        it = np.arange(s.size)
        ok = np.isfinite(s)
        out.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" '
                   f'stroke="{COLORS[i % len(COLORS)]}" stroke-width="1.5" '
                   f'points="{_points(ax.x(it[ok]), ax.y(s[ok]))}"/>')
    out += ax.ticks("iteration", "mean best-mode cost")
    out += _legend(list(series))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _star(cx: float, cy: float, r: float) -> str:
    ang = np.pi / 2 + np.arange(10) * np.pi / 5
    rad = np.where(np.arange(10) % 2 == 0, r, 0.45 * r)
    return _points(cx + rad * np.cos(ang), cy - rad * np.sin(ang))


def plot_trajectories(
    paths: Mapping[str, Sequence[np.ndarray]],
    obstacles,
    start,
    target,
    dims: tuple[int, int] = (0, 1),
    title: str = "Executed paths",
) -> str:
    """Obstacles as circles, executed paths as polylines, start x, target star, terminal dots.

    ``paths[solver]`` holds position sequences (steps, d); ``dims`` selects
    the two plotted coordinates.
    """
    i, j = dims
    pts = [np.asarray(start, float)[[i, j]], np.asarray(target, float)[[i, j]]]
    for runs in paths.values():
        pts += [np.asarray(p, float)[:, [i, j]] for p in runs if len(p)]
    for o in obstacles:
        c = np.asarray(o.center, float)[[i, j]]
        pts += [c - o.radius, c + o.radius]
    allp = np.vstack([np.atleast_2d(p) for p in pts])
    allp = allp[np.isfinite(allp).all(axis=1)]
    ax = _Axes((allp[:, 0].min(), allp[:, 0].max()), (allp[:, 1].min(), allp[:, 1].max()), equal=True)
    out = ax.header(title)
    for o in obstacles:
        c = np.asarray(o.center, float)[[i, j]]
        out.append(f'<circle class="obstacle" cx="{ax.x(c[0]):.2f}" cy="{ax.y(c[1]):.2f}" '
                   f'r="{ax.scale(o.radius):.2f}" fill="#bbbbbb" stroke="#555555"/>')
    for k, (name, runs) in enumerate(paths.items()):
        color = COLORS[k % len(COLORS)]
        for p in runs:
            p = np.asarray(p, float)
            p = p[np.isfinite(p).all(axis=1)]
            if not len(p):
                continue
            out.append(f'<polyline class="path" data-name="{escape(name)}" fill="none" stroke="{color}" '
                       f'stroke-width="1.2" points="{_points(ax.x(p[:, i]), ax.y(p[:, j]))}"/>')
            out.append(f'<circle class="terminal" cx="{ax.x(p[-1, i]):.2f}" cy="{ax.y(p[-1, j]):.2f}" '
                       f'r="3" fill="{color}"/>')
    sx, sy = ax.x(pts[0][0]), ax.y(pts[0][1])
    out.append(f'<path class="start" d="M{sx - 6:.2f},{sy - 6:.2f} L{sx + 6:.2f},{sy + 6:.2f} '
               f'M{sx - 6:.2f},{sy + 6:.2f} L{sx + 6:.2f},{sy - 6:.2f}" stroke="black" stroke-width="2"/>')
    out.append(f'<polygon class="target" points="{_star(ax.x(pts[1][0]), ax.y(pts[1][1]), 9)}" '
               'fill="gold" stroke="black"/>')
    out += ax.ticks(f"position[{i}]", f"position[{j}]")
    out += _legend(list(paths))
    out.append("</svg>")
    return "\n".join(out) + "\n"
