"""Report figures (matplotlib, file output only) and pose overlays (Pillow)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image, ImageDraw  # noqa: E402

from .model import ImageRaster, PartCandidate  # noqa: E402

ERROR_COLOR = (255, 0, 0)
CORRECT_COLOR = (0, 200, 0)
# used when no ground truth is available; none of these is the error color
PART_COLORS = (
    (255, 215, 0),
    (0, 191, 255),
    (50, 205, 50),
    (255, 140, 0),
    (186, 85, 211),
    (0, 206, 209),
)


def objective_curve(records, path) -> None:
    """Training objective per mining iteration, with relabel boundaries marked."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = np.arange(1, len(records) + 1)
    ax.plot(xs, [r.objective for r in records], marker="o")
    for n in range(1, len(records)):
        if records[n].relabel != records[n - 1].relabel:
            ax.axvline(n + 0.5, color="grey", lw=0.8, ls="--")
    ax.set_xlabel("mining iteration")
    ax.set_ylabel("objective")
    ax.set_title("training objective")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def pcp_bars(names, rates, path) -> None:
    """Per-part PCP as a bar chart (rates in percent)."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(names)), rates, color="steelblue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0, 100)
    ax.set_ylabel("PCP (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def box_corners(c: PartCandidate, aspect: float = 0.5) -> list[tuple[float, float]]:
    """Corners of the oriented box: long side s along theta, short side s * aspect."""
    u = np.array([math.cos(c.theta), math.sin(c.theta)])
    v = np.array([-u[1], u[0]])
    hl, hw = 0.5 * c.s, 0.5 * c.s * aspect
    centre = np.array([c.x, c.y])
    return [tuple(centre + a * hl * u + b * hw * v) for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1))]


def render_overlay(image: ImageRaster, boxes, verdicts=None, aspect: float = 0.5, width: int = 2):
    """Draw one outline per part on a copy of the image.

    ``verdicts`` holds per-part True / False / None from a PCP check; False parts
    get the error color. Returns the new raster and the color used for each box.
    """
    canvas = Image.fromarray(np.array(image.pixels))
    draw = ImageDraw.Draw(canvas)
    colors = []
    for i, c in enumerate(boxes):
        if verdicts is None or verdicts[i] is None:
            color = PART_COLORS[i % len(PART_COLORS)]
        else:
            color = CORRECT_COLOR if verdicts[i] else ERROR_COLOR
        pts = box_corners(c, aspect)
        draw.line(pts + [pts[0]], fill=color, width=width)
        colors.append(color)
    return ImageRaster(np.asarray(canvas, dtype=np.uint8)), colors
