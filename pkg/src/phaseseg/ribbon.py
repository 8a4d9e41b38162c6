"""Qualitative ribbon rendering: one colored horizontal band per label row,
segment boundaries at exact frame positions, plus a class-color legend.
Output is deterministic SVG text for fixed input."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .metrics import to_segments

# Fixed high-contrast palette keyed by class index (cycled past 20 classes).
PALETTE = (
    "#f3c300", "#875692", "#f38400", "#a1caf1", "#be0032",
    "#c2b280", "#848482", "#008856", "#e68fac", "#0067a5",
    "#f99379", "#604e97", "#f6a600", "#b3446c", "#dcd300",
    "#882d17", "#8db600", "#654522", "#e25822", "#2b3d26",
)

ROW_HEIGHT = 28
ROW_GAP = 10
LABEL_WIDTH = 120
LEGEND_SWATCH = 14
LEGEND_ROW = 22


def class_color(class_index: int) -> str:
    return PALETTE[class_index % len(PALETTE)]


def render_ribbon(
    rows: list[tuple[str, np.ndarray]],
    vocabulary: list[str],
    px_per_frame: float = 2.0,
) -> str:
    """Build the SVG document for aligned label rows (ground truth first by
    convention, then prediction rows)."""
    if not rows:
        raise ValueError("need at least one label row")
    lengths = {np.asarray(getattr(r, "labels", r)).shape[0] for _, r in rows}
    if len(lengths) != 1:
        raise ValueError(f"row length mismatch: rows have frame counts {sorted(lengths)}")
    frames = lengths.pop()
    used = sorted(
        {int(v) for _, row in rows for v in np.asarray(getattr(row, "labels", row))}
    )
    band_width = frames * px_per_frame
    legend_height = LEGEND_ROW * len(used) + ROW_GAP
    height = len(rows) * (ROW_HEIGHT + ROW_GAP) + legend_height + ROW_GAP
    width = LABEL_WIDTH + band_width + 20

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{height:g}" '
        f'font-family="sans-serif" font-size="12">'
    ]
    y = ROW_GAP
    for name, row in rows:
        parts.append(
            f'<text x="{LABEL_WIDTH - 8}" y="{y + ROW_HEIGHT / 2 + 4:g}" '
            f'text-anchor="end">{name}</text>'
        )
        for seg in to_segments(row):
            x = LABEL_WIDTH + seg.start * px_per_frame
            parts.append(
                f'<rect x="{x:g}" y="{y:g}" width="{seg.length * px_per_frame:g}" '
                f'height="{ROW_HEIGHT}" fill="{class_color(seg.label)}"/>'
            )
        y += ROW_HEIGHT + ROW_GAP
    y += ROW_GAP
    for cls in used:
        name = vocabulary[cls] if cls < len(vocabulary) else f"class_{cls}"
        parts.append(
            f'<rect x="{LABEL_WIDTH:g}" y="{y}" width="{LEGEND_SWATCH}" '
            f'height="{LEGEND_SWATCH}" fill="{class_color(cls)}"/>'
        )
        parts.append(
            f'<text x="{LABEL_WIDTH + LEGEND_SWATCH + 6:g}" y="{y + LEGEND_SWATCH - 2}">{name}</text>'
        )
        y += LEGEND_ROW
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_ribbon(
    rows: list[tuple[str, np.ndarray]],
    vocabulary: list[str],
    path: str | Path,
    px_per_frame: float = 2.0,
) -> None:
    Path(path).write_text(render_ribbon(rows, vocabulary, px_per_frame))
