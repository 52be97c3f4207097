"""Self-contained SVG log-log plots of sweep results."""
from __future__ import annotations

import math
from collections import defaultdict
from xml.sax.saxutils import escape

import numpy as np

from .experiments import read_rows

PLOT_KINDS = ("kl_vs_n", "ratio_vs_n", "ratio_vs_kl")
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]

W, H = 640, 480
ML, MR, MT, MB = 70, 110, 30, 55


class EmptySelectionError(ValueError):
    """No rows usable for the requested plot."""


def reference_estimator(rows, allow_klvar: bool = False) -> str:
    """The KL reference present in ``rows``: the chain route when available.

    With ``allow_klvar`` a file holding only ``klvar`` rows falls back to them.
    """
    names = {r.estimator for r in rows}
    for cand in ("kl_chain", "kl_direct") + (("klvar",) if allow_klvar else ()):
        if cand in names:
            return cand
    raise EmptySelectionError("no reference KL rows (kl_chain or kl_direct) in the results")


def _points(rows, kind):
    ref = reference_estimator(rows, allow_klvar=kind == "kl_vs_n")
    by_cell = defaultdict(dict)
    for r in rows:
        if math.isfinite(r.value):
            by_cell[(r.p, r.n, r.seed)][r.estimator] = r.value
    pts = []  # (p, x, y)
    for (p, n, _), vals in sorted(by_cell.items()):
        kl = vals.get(ref)
        if kl is None or kl <= 0:
            continue
        if kind == "kl_vs_n":
            pts.append((p, n, kl))
        elif "klvar" in vals and vals["klvar"] > 0:
            ratio = vals["klvar"] / kl
            pts.append((p, n if kind == "ratio_vs_n" else kl, ratio))
    if not pts:
        raise EmptySelectionError(f"no rows usable for a {kind} plot")
    return pts, ref


def _log_range(v):
    lo, hi = math.log10(min(v)), math.log10(max(v))
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def plot_results(rows, kind: str) -> str:
    """Return an SVG document for ``kind`` in :data:`PLOT_KINDS`.

    Points are individual cells, lines join per-``p`` means over seeds.
    ``kl_vs_n`` adds a slope -1 guide.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"kind must be one of {PLOT_KINDS}")
    pts, ref = _points(rows, kind)
    xr = _log_range([x for _, x, _ in pts])
    yr = _log_range([y for _, _, y in pts])

    def sx(x):
        return ML + (math.log10(x) - xr[0]) / (xr[1] - xr[0]) * (W - ML - MR)

    def sy(y):
        return H - MB - (math.log10(y) - yr[0]) / (yr[1] - yr[0]) * (H - MT - MB)

    labels = {"kl_vs_n": ("n", f"KL ({ref})"),
              "ratio_vs_n": ("n", f"(KLvar/2) / KL ({ref})"),
              "ratio_vs_kl": (f"KL ({ref})", "(KLvar/2) / KL")}[kind]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
           'fill="none" stroke="black"/>']
    for dec in range(math.ceil(xr[0]), math.floor(xr[1]) + 1):
        x = sx(10.0**dec)
        out.append(f'<line x1="{x:.2f}" y1="{H - MB}" x2="{x:.2f}" y2="{H - MB + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{H - MB + 18}" text-anchor="middle">1e{dec}</text>')
    for dec in range(math.ceil(yr[0]), math.floor(yr[1]) + 1):
        y = sy(10.0**dec)
        out.append(f'<line x1="{ML - 5}" y1="{y:.2f}" x2="{ML}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ML - 8}" y="{y + 4:.2f}" text-anchor="end">1e{dec}</text>')
    out.append(f'<text x="{(ML + W - MR) / 2:.1f}" y="{H - 12}" text-anchor="middle">{escape(labels[0])}</text>')
    out.append(f'<text x="16" y="{(MT + H - MB) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(MT + H - MB) / 2:.1f})">{escape(labels[1])}</text>')

    ps = sorted({p for p, _, _ in pts})
    for i, p in enumerate(ps):
        col = _COLORS[i % len(_COLORS)]
        mine = [(x, y) for q, x, y in pts if q == p]
        for x, y in mine:
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{col}" fill-opacity="0.6"/>')
        groups = defaultdict(list)
        for x, y in mine:
            groups[x].append(y)
        if kind != "ratio_vs_kl" and len(groups) > 1:
            path = " ".join(f"{sx(x):.2f},{sy(float(np.mean(ys))):.2f}" for x, ys in sorted(groups.items()))
            out.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="2"/>')
        ly = MT + 15 + 18 * i
        out.append(f'<circle cx="{W - MR + 15}" cy="{ly - 4}" r="4" fill="{col}"/>')
        out.append(f'<text x="{W - MR + 25}" y="{ly}">p = {p}</text>')
    if kind == "kl_vs_n":
        # slope -1 guide through the largest-n mean
        xs = sorted({x for _, x, _ in pts})
        x1 = xs[-1]
        y1 = float(np.mean([y for _, x, y in pts if x == x1]))
        x0 = xs[0]
        y0 = y1 * x1 / x0
        out.append(f'<line x1="{sx(x0):.2f}" y1="{sy(y0):.2f}" x2="{sx(x1):.2f}" y2="{sy(y1):.2f}" '
                   'stroke="gray" stroke-dasharray="6,4" clip-path="url(#plotarea)"/>')
        out.append(f'<text x="{W - MR + 15}" y="{MT + 15 + 18 * len(ps)}" fill="gray">slope -1</text>')
    out.insert(1, f'<defs><clipPath id="plotarea"><rect x="{ML}" y="{MT}" width="{W - ML - MR}" '
                  f'height="{H - MT - MB}"/></clipPath></defs>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_file(in_path, kind: str, out_path) -> None:
    """Read results from ``in_path`` and write the SVG to ``out_path``.

    Nothing is written when the selection is empty.
    """
    rows = read_rows(in_path)
    if not rows:
        raise EmptySelectionError(f"{in_path}: no result rows")
    svg = plot_results(rows, kind)
    with open(out_path, "w") as fh:
        fh.write(svg)


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` on ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])
