"""The 0..1000 grid convention for image-space rectangles.

Oracle bounding boxes are integers on a 1000x1000 grid regardless of the
actual render resolution; rectangles are (ymin, xmin, ymax, xmax) with the
max edges exclusive after conversion to pixels.
"""

from __future__ import annotations

import math

GRID = 1000


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def grid_rect_to_pixels(
    rect: tuple[int, int, int, int], resolution: tuple[int, int]
) -> tuple[int, int, int, int]:
    """Map a 0..1000 grid rectangle to a half-open pixel rectangle.

    y_px = round(y_grid * H / 1000), x_px likewise with W.
    """
    ymin, xmin, ymax, xmax = rect
    w, h = resolution
    return (
        _round_half_up(ymin * h / GRID),
        _round_half_up(xmin * w / GRID),
        _round_half_up(ymax * h / GRID),
        _round_half_up(xmax * w / GRID),
    )


def pixel_rect_to_grid(
    rect: tuple[int, int, int, int], resolution: tuple[int, int]
) -> tuple[int, int, int, int]:
    """Inverse of grid_rect_to_pixels (within one grid unit)."""
    ymin, xmin, ymax, xmax = rect
    w, h = resolution
    return (
        min(GRID, _round_half_up(ymin * GRID / h)),
        min(GRID, _round_half_up(xmin * GRID / w)),
        min(GRID, _round_half_up(ymax * GRID / h)),
        min(GRID, _round_half_up(xmax * GRID / w)),
    )
