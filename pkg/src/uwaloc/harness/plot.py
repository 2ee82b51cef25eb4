"""Deterministic SVG line plots of summary CSVs (mean with +/- std error bars).

The SVG is written by hand so the output is a pure function of the CSV
content: no timestamps, no font metrics, fixed number formatting.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

from .config import METHODS
from .experiment import read_summary

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 150, 30, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
METRICS = {"pcl": ("pcl_mean", "pcl_std", "PCL (%)"), "mae": ("mae_mean", "mae_std", "MAE (m)")}
AXES = {"snr": ("snr_db", "delta_c", "SNR (dB)"), "delta_c": ("delta_c", "snr_db", "Delta c (m/s)")}


@dataclass(frozen=True)
class AxisSpec:
    """Which summary columns to plot.

    Parameters
    ----------
    x : {"snr", "delta_c"}
        Sweep variable on the horizontal axis.
    metric : {"pcl", "mae"}
        Metric on the vertical axis.
    fixed : float or None
        Value of the other sweep variable to slice at. ``None`` requires the
        CSV to contain a single value of it.
    """

    x: str = "snr"
    metric: str = "pcl"
    fixed: float | None = None

    def __post_init__(self):
        if self.x not in AXES:
            raise ValueError(f"x must be one of {sorted(AXES)}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {sorted(METRICS)}")


Series = dict[str, list[tuple[float, float, float]]]


def collect_series(summary: list[dict], spec: AxisSpec) -> Series:
    """Group summary rows into ``{method: [(x, mean, std), ...]}`` sorted by x."""
    x_key, other_key, _ = AXES[spec.x]
    mean_key, std_key, _ = METRICS[spec.metric]
    others = sorted({row[other_key] for row in summary})
    if spec.fixed is None:
        if len(others) > 1:
            raise ValueError(f"summary has several {other_key} values {others}; pass a fixed value")
        fixed = others[0] if others else None
    else:
        fixed = float(spec.fixed)
    series: Series = {}
    for row in summary:
        if row[other_key] != fixed:
            continue
        series.setdefault(row["method"], []).append((row[x_key], row[mean_key], row[std_key]))
    if not series:
        raise ValueError("no data to plot")
    for pts in series.values():
        pts.sort()
    order = {m: i for i, m in enumerate(METHODS)}
    return dict(sorted(series.items(), key=lambda kv: (order.get(kv[0], len(order)), kv[0])))


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_svg(series: Series, spec: AxisSpec) -> str:
    """Render grouped series into an SVG document string."""
    if not series or any(not pts for pts in series.values()):
        raise ValueError("cannot plot an empty series")
    xs = [p[0] for pts in series.values() for p in pts]
    lows = [p[1] - p[2] for pts in series.values() for p in pts]
    highs = [p[1] + p[2] for pts in series.values() for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(lows), max(highs)
    if spec.metric == "pcl":
        y_lo, y_hi = min(y_lo, 0.0), max(y_hi, 100.0)
    else:
        y_lo = min(y_lo, 0.0)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1
    pw, ph = WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return MARGIN_T + (1 - (y - y_lo) / (y_hi - y_lo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{_num(sx(t))}" y1="{MARGIN_T + ph}" x2="{_num(sx(t))}" y2="{MARGIN_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(sx(t))}" y="{MARGIN_T + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{_num(sy(t))}" x2="{MARGIN_L}" y2="{_num(sy(t))}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_L - 8}" y="{_num(sy(t) + 4)}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(AXES[spec.x][2])}</text>')
    out.append(f'<text x="15" y="{MARGIN_T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {MARGIN_T + ph / 2:.1f})">{escape(METRICS[spec.metric][2])}</text>')
    for i, (method, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{_num(sx(x))},{_num(sy(m))}" for x, m, _ in pts)
        out.append(f'<g class="series" data-method="{escape(method)}">')
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for x, m, s in pts:
            out.append(f'<line class="errorbar" x1="{_num(sx(x))}" y1="{_num(sy(m - s))}" '
                       f'x2="{_num(sx(x))}" y2="{_num(sy(m + s))}" stroke="{color}"/>')
        out.append("</g>")
        ly = MARGIN_T + 15 + 18 * i
        out.append(f'<line x1="{WIDTH - MARGIN_R + 10}" y1="{ly}" x2="{WIDTH - MARGIN_R + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN_R + 35}" y="{ly + 4}">{escape(method)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(summary_csv: str | Path, out_path: str | Path, spec: AxisSpec = AxisSpec()) -> Path:
    """Read a summary CSV and write an SVG plot to ``out_path``.

    Raises
    ------
    ValueError
        If the CSV is malformed or no series survives the slicing. No file is
        written in that case.
    """
    summary = read_summary(summary_csv)
    svg = render_svg(collect_series(summary, spec), spec)
    out = Path(out_path)
    out.write_text(svg)
    return out
