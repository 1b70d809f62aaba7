"""Plain-text tables and dependency-free SVG plots for run reports."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def text_table(headers: list[str], rows: list[list[str]]) -> str:
    headers = [str(h) for h in headers]
    rows = [[str(c) for c in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), fmt.format(*["-" * w for w in widths])]
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(lines) + "\n"


def polyline_svg(path, series: list[tuple[str, list[float]]], title: str = "",
                 width: int = 720, height: int = 400) -> None:
    """Write a minimal line chart; series is [(label, values), ...]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    margin = 40
    x0, x1 = margin, width - margin
    y0, y1 = margin, height - margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
        'fill="none" stroke="#888"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{escape(title)}</text>'
        )
    all_values = [v for _, ys in series for v in ys if ys]
    if all_values:
        lo, hi = min(all_values), max(all_values)
        parts.append(
            f'<text x="{x0}" y="{y0 - 6}" font-family="sans-serif" font-size="10">'
            f"{hi:.4g}</text>"
        )
        parts.append(
            f'<text x="{x0}" y="{y1 + 14}" font-family="sans-serif" font-size="10">'
            f"{lo:.4g}</text>"
        )
    for idx, (label, ys) in enumerate(series):
        if not ys:
            continue
        color = PALETTE[idx % len(PALETTE)]
        # normalize each series against the shared range
        lo, hi = (min(all_values), max(all_values)) if all_values else (0.0, 1.0)
        span = (hi - lo) or 1.0
        pts = []
        for i, v in enumerate(ys):
            x = x0 + (x1 - x0) * (i / max(len(ys) - 1, 1))
            y = y1 - (y1 - y0) * ((v - lo) / span)
            pts.append(f"{x:.2f},{y:.2f}")
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{x1 - 120}" y="{y0 + 16 + 14 * idx}" fill="{color}" '
            f'font-family="sans-serif" font-size="11">{escape(label)}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def heatmap_svg(path, labels: list[str], matrix, title: str = "") -> None:
    """Square correlation heatmap; matrix[i][j] in [-1, 1] or None."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(labels)
    cell = 56
    margin = 90
    size = margin + n * cell + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{size / 2:.0f}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{escape(title)}</text>'
        )
    for i, name in enumerate(labels):
        parts.append(
            f'<text x="{margin - 6}" y="{margin + i * cell + cell / 2 + 4:.0f}" '
            f'text-anchor="end" font-family="sans-serif" font-size="10">{escape(name)}</text>'
        )
        parts.append(
            f'<text x="{margin + i * cell + cell / 2:.0f}" y="{margin - 8}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="10">{escape(name)}</text>'
        )
    for i in range(n):
        for j in range(n):
            v = matrix[i][j]
            if v is None:
                fill = "#eeeeee"
                label = ""
            else:
                # blue for negative, red for positive
                intensity = int(round(255 * (1 - abs(v))))
                fill = (
                    f"rgb(255,{intensity},{intensity})" if v >= 0
                    else f"rgb({intensity},{intensity},255)"
                )
                label = f"{v:.2f}"
            x, y = margin + j * cell, margin + i * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{fill}" stroke="#999"/>'
            )
            if label:
                parts.append(
                    f'<text x="{x + cell / 2:.0f}" y="{y + cell / 2 + 4:.0f}" '
                    f'text-anchor="middle" font-family="sans-serif" font-size="10">{label}</text>'
                )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
