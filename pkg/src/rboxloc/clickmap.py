"""Click-point proximity map and query-channel attachment.

The map turns a single user click into a dense spatial prior: each grid
cell gets ``(1 - d / diag)**2`` where ``d`` is the distance from the
cell to the click and ``diag`` the image diagonal, so the value is 1 at
the click and decays monotonically to a floor above 0 at the far
corner.  The map is concatenated to the query image as an extra
channel.
"""

from __future__ import annotations

import math

import numpy as np


def make_click_map(height: int, width: int, click: tuple[float, float]) -> np.ndarray:
    """Build the (height, width) proximity map for a click at (x, y).

    Cell (i, j) is the pixel at x=j, y=i.  Sub-pixel clicks are allowed;
    the click must lie inside ``[0, width) x [0, height)``.
    """
    if height < 1 or width < 1:
        raise ValueError(f"image plane must be at least 1x1, got {height}x{width}")
    x, y = float(click[0]), float(click[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"click must be finite, got {click!r}")
    if not (0.0 <= x < width and 0.0 <= y < height):
        raise ValueError(f"click {click!r} outside {width}x{height} image plane")
    diag = math.sqrt(height * height + width * width)
    jj, ii = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    dist = np.hypot(jj - x, ii - y)
    return (1.0 - dist / diag) ** 2


def attach_click_channel(image: np.ndarray, click_map: np.ndarray) -> np.ndarray:
    """Stack a click map under an image as one more channel.

    ``image`` is channels-first (c, h, w); the result is (c+1, h, w)
    with the map as the last channel.
    """
    image = np.asarray(image, dtype=np.float64)
    click_map = np.asarray(click_map, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"image must be (c, h, w), got shape {image.shape}")
    if click_map.ndim != 2 or image.shape[1:] != click_map.shape:
        raise ValueError(
            f"spatial shape mismatch: image {image.shape[1:]} vs map {click_map.shape}"
        )
    return np.concatenate([image, click_map[None, :, :]], axis=0)
