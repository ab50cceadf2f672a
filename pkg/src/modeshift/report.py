"""Deterministic report rendering: canonical JSON, CSV tables, SVG histograms.

Everything here is byte-stable for identical inputs: keys are sorted, floats
go through repr, and the SVG writer embeds no timestamps or library metadata.
"""

from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np

from .diagnostics import BalanceRow, OverlapReport


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def balance_csv(rows: Sequence[BalanceRow]) -> str:
    header = (
        "covariate,mean_treated_before,mean_control_before,smd_before,p_before,"
        "mean_treated_after,mean_control_after,smd_after,p_after"
    )
    def cell(v):
        return "" if v is None else repr(float(v))

    lines = [header]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.covariate,
                    cell(r.mean_treated_before),
                    cell(r.mean_control_before),
                    cell(r.smd_before),
                    cell(r.p_before),
                    cell(r.mean_treated_after),
                    cell(r.mean_control_after),
                    cell(r.smd_after),
                    cell(r.p_after),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def balance_rows_json(rows: Sequence[BalanceRow]) -> list[dict]:
    return [
        {
            "covariate": r.covariate,
            "mean_treated_before": r.mean_treated_before,
            "mean_control_before": r.mean_control_before,
            "smd_before": r.smd_before,
            "p_before": r.p_before,
            "mean_treated_after": r.mean_treated_after,
            "mean_control_after": r.mean_control_after,
            "smd_after": r.smd_after,
            "p_after": r.p_after,
            "smd_undefined": r.smd_undefined,
        }
        for r in rows
    ]


_SVG_W, _SVG_H = 640, 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 20, 40, 50
_COLORS = ("#1f77b4", "#d62728")


def _bars(edges, counts, y_max, color, opacity) -> list[str]:
    plot_w = _SVG_W - _MARGIN_L - _MARGIN_R
    plot_h = _SVG_H - _MARGIN_T - _MARGIN_B
    span = edges[-1] - edges[0]
    out = []
    for i, c in enumerate(counts):
        if c == 0:
            continue
        x0 = _MARGIN_L + (edges[i] - edges[0]) / span * plot_w
        x1 = _MARGIN_L + (edges[i + 1] - edges[0]) / span * plot_w
        h = c / y_max * plot_h
        out.append(
            f'<rect x="{x0:.2f}" y="{_MARGIN_T + plot_h - h:.2f}" '
            f'width="{x1 - x0:.2f}" height="{h:.2f}" fill="{color}" fill-opacity="{opacity}"/>'
        )
    return out


def svg_histogram(
    edges: np.ndarray,
    series: Sequence[tuple[str, np.ndarray]],
    title: str,
    x_label: str,
) -> str:
    """Overlaid bar histogram; one color per named series."""
    edges = np.asarray(edges, dtype=float)
    y_max = max(1, max(int(np.max(counts)) if len(counts) else 0 for _, counts in series))
    plot_h = _SVG_H - _MARGIN_T - _MARGIN_B
    plot_w = _SVG_W - _MARGIN_L - _MARGIN_R
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{_SVG_W / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
    ]
    for (label, counts), color in zip(series, _COLORS):
        parts.extend(_bars(edges, counts, y_max, color, 0.55))
    # axes
    x_axis_y = _MARGIN_T + plot_h
    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{x_axis_y}" x2="{_MARGIN_L + plot_w}" y2="{x_axis_y}" '
        f'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" y2="{x_axis_y}" '
        f'stroke="black" stroke-width="1"/>'
    )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = _MARGIN_L + frac * plot_w
        value = edges[0] + frac * (edges[-1] - edges[0])
        parts.append(
            f'<line x1="{x:.2f}" y1="{x_axis_y}" x2="{x:.2f}" y2="{x_axis_y + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{x_axis_y + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{value:.2f}</text>'
        )
        y = x_axis_y - frac * plot_h
        parts.append(
            f'<line x1="{_MARGIN_L - 5}" y1="{y:.2f}" x2="{_MARGIN_L}" y2="{y:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 9}" y="{y + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{frac * y_max:.0f}</text>'
        )
    parts.append(
        f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{_SVG_H - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{x_label}</text>'
    )
    # legend
    lx = _MARGIN_L + plot_w - 150
    for k, ((label, _), color) in enumerate(zip(series, _COLORS)):
        ly = _MARGIN_T + 10 + 18 * k
        parts.append(f'<rect x="{lx}" y="{ly - 9}" width="12" height="12" fill="{color}" fill-opacity="0.55"/>')
        parts.append(
            f'<text x="{lx + 18}" y="{ly + 2}" font-family="sans-serif" font-size="12">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def overlap_svg(report: OverlapReport) -> str:
    return svg_histogram(
        report.bin_edges,
        [("informed", report.counts_treated), ("uninformed", report.counts_control)],
        "Propensity-score overlap by information status",
        "propensity score",
    )


def cate_svg(cates: np.ndarray, bins: int = 30) -> str:
    cates = np.asarray(cates, dtype=float)
    lo = min(float(cates.min()), 0.0)
    hi = max(float(cates.max()), 0.0)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(cates, bins=bins, range=(lo, hi))
    return svg_histogram(
        edges,
        [("guests", counts)],
        "Distribution of conditional effect estimates",
        "estimated effect on PT usage",
    )
