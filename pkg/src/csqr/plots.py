"""Standalone SVG renderings of evaluation reports.

Output is plain text built from fixed-precision numbers, so the same input
frame always gives the same bytes.
"""

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=160, top=40, bottom=50)
PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")
MAX_RADIUS = 14.0


def _f(v):
    return f"{v:.2f}"


def _header(title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
    ]


def _nice_range(lo, hi):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _axes(xlim, ylim, xlabel, ylabel, nticks=5):
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def sx(x):
        return x0 + (x - xlim[0]) / (xlim[1] - xlim[0]) * (x1 - x0)

    def sy(y):
        return y0 - (y - ylim[0]) / (ylim[1] - ylim[0]) * (y0 - y1)

    out = [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for v in np.linspace(xlim[0], xlim[1], nticks):
        out.append(
            f'<text x="{_f(sx(v))}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:.2f}</text>'
        )
    for v in np.linspace(ylim[0], ylim[1], nticks):
        out.append(
            f'<text x="{x0 - 6}" y="{_f(sy(v) + 3)}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3g}</text>'
        )
    out.append(
        f'<text x="{(x0 + x1) / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{(y0 + y1) / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.0f})">{escape(ylabel)}</text>'
    )
    return out, sx, sy


def _legend(labels):
    x = WIDTH - MARGIN["right"] + 12
    out = []
    for i, label in enumerate(labels):
        y = MARGIN["top"] + 16 * i + 8
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{x}" y1="{y}" x2="{x + 18}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(
            f'<text x="{x + 24}" y="{y + 4}" font-family="sans-serif" font-size="11">{escape(str(label))}</text>'
        )
    return out


def curves_svg(series, title, ylabel="log RMISE", log=True):
    """Line plot of ``{label: (x, y, lower, upper)}``; lower/upper may be None.

    With ``log`` the y values are shown on the natural-log scale and
    non-positive values are dropped.
    """
    labels = list(series)
    prepared = {}
    for label in labels:
        x, y, lo, hi = (None if a is None else np.asarray(a, dtype=float) for a in series[label])
        if log:
            with np.errstate(divide="ignore", invalid="ignore"):
                y = np.log(np.where(y > 0, y, np.nan))
                lo = None if lo is None else np.log(np.where(lo > 0, lo, np.nan))
                hi = None if hi is None else np.log(np.where(hi > 0, hi, np.nan))
        prepared[label] = (x, y, lo, hi)
    xs = np.concatenate([p[0] for p in prepared.values()]) if prepared else np.array([0.0, 1.0])
    ys = np.concatenate([np.concatenate([a for a in p[1:] if a is not None]) for p in prepared.values()]) if prepared else np.array([])
    ys = ys[np.isfinite(ys)]
    xlim = _nice_range(float(xs.min()), float(xs.max()))
    ylim = _nice_range(float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    out = _header(title)
    ax, sx, sy = _axes(xlim, ylim, "tau", ylabel)
    out += ax
    for i, label in enumerate(labels):
        color = PALETTE[i % len(PALETTE)]
        x, y, lo, hi = prepared[label]
        if lo is not None and hi is not None:
            ok = np.isfinite(lo) & np.isfinite(hi)
            if ok.any():
                pts = [(sx(a), sy(b)) for a, b in zip(x[ok], hi[ok])]
                pts += [(sx(a), sy(b)) for a, b in zip(x[ok][::-1], lo[ok][::-1])]
                poly = " ".join(f"{_f(a)},{_f(b)}" for a, b in pts)
                out.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        ok = np.isfinite(y)
        pts = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
    out += _legend(labels)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def map_svg(lon, lat, value, title):
    """Bubble map: one circle per location with radius proportional to ``value``.

    Radii are scaled by the largest finite value; an all-zero map draws
    zero-radius circles.
    """
    lon, lat, value = (np.asarray(a, dtype=float) for a in (lon, lat, value))
    finite = value[np.isfinite(value)]
    vmax = float(finite.max()) if finite.size else 0.0
    xlim = _nice_range(float(lon.min()), float(lon.max()))
    ylim = _nice_range(float(lat.min()), float(lat.max()))
    out = _header(title)
    ax, sx, sy = _axes(xlim, ylim, "lon", "lat")
    out += ax
    for a, b, v in zip(lon, lat, value):
        r = 0.0 if not (math.isfinite(v) and vmax > 0) else MAX_RADIUS * max(v, 0.0) / vmax
        out.append(f'<circle cx="{_f(sx(a))}" cy="{_f(sy(b))}" r="{_f(r)}" fill="#d95f02" fill-opacity="0.6"/>')
    x = WIDTH - MARGIN["right"] + 12
    out.append(
        f'<text x="{x}" y="{MARGIN["top"] + 10}" font-family="sans-serif" font-size="11">max = {vmax:.4g}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _label(variant, adjusted):
    return f"Model {int(variant)}" + (" AD" if bool(adjusted) else "")


def report_curves(frame, metric):
    """Spatial-average curves of ``metric`` per variant from a report frame."""
    avg = frame[(frame["metric"] == metric) & frame["lon"].isna()]
    series = {}
    for (variant, adjusted), g in avg.groupby(["variant", "adjusted"], sort=True):
        g = g.sort_values("tau")
        n = g["n"].to_numpy(dtype=float) if "n" in g else np.ones(len(g))
        half = 1.96 * g["sd"].to_numpy() / np.sqrt(np.maximum(n, 1))
        mean = g["mean"].to_numpy()
        series[_label(variant, adjusted)] = (g["tau"].to_numpy(), mean, mean - half, mean + half)
    return series


def render_report(frame, out_dir, map_tau=0.05):
    """Write curve and map SVGs for a report frame; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    names = {"response_rmise": "response", "sqte_rmise": "sqte"}
    for metric, short in names.items():
        series = report_curves(frame, metric)
        if not series:
            continue
        path = out_dir / f"curves_{short}.svg"
        path.write_text(curves_svg(series, f"{short} RMISE (spatial average)"))
        written.append(path)
        sub = frame[(frame["metric"] == metric) & frame["lon"].notna() & np.isclose(frame["tau"], map_tau)]
        for (variant, adjusted), g in sub.groupby(["variant", "adjusted"], sort=True):
            label = _label(variant, adjusted)
            path = out_dir / f"map_{short}_{label.replace(' ', '_').lower()}.svg"
            path.write_text(map_svg(g["lon"], g["lat"], g["mean"], f"{label}: {short} RMISE at tau = {map_tau:g}"))
            written.append(path)
    return written


def render_sensitivity(frame, path):
    """Spatial-average effect RMISE per coverage fraction."""
    avg = frame[(frame["metric"] == "sqte_rmise") & frame["lon"].isna()]
    series = {}
    for (variant, coverage), g in avg.groupby(["variant", "coverage"], sort=True):
        g = g.sort_values("tau")
        label = f"Model {int(variant)}, rho = {coverage:g}" if coverage > 0 else f"Model {int(variant)}, unadjusted"
        series[label] = (g["tau"].to_numpy(), g["mean"].to_numpy(), None, None)
    Path(path).write_text(curves_svg(series, "sqte RMISE by neighbourhood fraction"))
    return Path(path)
