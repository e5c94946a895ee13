"""Hand-rolled SVG scatter and line plots; diagnostic output only, the
CSV result tables are the contract."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]

W, H, PAD = 480, 480, 40


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return out_lo + (np.asarray(vals) - lo) / span * (out_hi - out_lo)


def _frame(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" '
        f'fill="none" stroke="#cccccc"/>',
    ]


def scatter_svg(path, points: np.ndarray, labels=None, title: str = "") -> None:
    """2-D scatter, one color per label."""
    points = np.asarray(points)
    labels = np.zeros(len(points), dtype=int) if labels is None else np.asarray(labels)
    lo, hi = points.min(axis=0), points.max(axis=0)
    xs = _scale(points[:, 0], lo[0], hi[0], PAD, W - PAD)
    ys = _scale(points[:, 1], lo[1], hi[1], H - PAD, PAD)
    parts = _frame(title)
    for x, y, c in zip(xs, ys, labels):
        color = _PALETTE[int(c) % len(_PALETTE)]
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2" fill="{color}" '
                     f'fill-opacity="0.6"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def line_svg(path, xs, series: dict, title: str = "", x_label: str = "") -> None:
    """Line plot of one or more named series over shared x values."""
    xs = np.asarray(xs, dtype=float)
    all_y = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    px = _scale(xs, xs.min(), xs.max(), PAD, W - PAD)
    parts = _frame(title)
    for i, (name, ys) in enumerate(sorted(series.items())):
        py = _scale(ys, y_lo, y_hi, H - PAD, PAD)
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(px, py))
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{W - PAD + 2}" y="{PAD + 14 * i + 10}" font-size="10" '
                     f'fill="{color}">{name}</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle" '
                 f'font-size="11">{x_label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
