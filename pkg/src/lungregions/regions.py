"""Four-region partition of the lungs around a reference row."""

from __future__ import annotations

import numpy as np

from .raster import (
    LLR,
    LUR,
    REGION_NAMES,
    RLR,
    RUR,
    Point,
    as_binary_mask,
    as_region_mask,
    check_same_shape,
)


def split_four_regions(right_lung, left_lung, ref: Point) -> np.ndarray:
    """Label lung pixels RUR/RLR/LUR/LLR.

    Rows strictly above ``ref.y`` are upper; the reference row itself belongs
    to the lower regions.
    """
    right = as_binary_mask(right_lung, "right_lung")
    left = as_binary_mask(left_lung, "left_lung")
    check_same_shape(right, left, names=("right_lung", "left_lung"))
    if np.any(right & left):
        raise ValueError("right and left lung masks overlap")
    height = right.shape[0]
    if not 0 <= ref.y < height:
        raise ValueError(f"reference row {ref.y} outside 0..{height - 1}")

    upper = (np.arange(height) < ref.y)[:, None]
    labels = np.zeros(right.shape, dtype=np.uint8)
    labels[right & upper] = RUR
    labels[right & ~upper] = RLR
    labels[left & upper] = LUR
    labels[left & ~upper] = LLR
    return labels


def region_areas(labels, spacing_mm: float) -> dict[str, tuple[int, float]]:
    """Pixel count and physical area (mm^2) of each region."""
    labels = as_region_mask(labels)
    counts = np.bincount(labels.ravel(), minlength=5)
    return {name: (int(counts[code]), int(counts[code]) * spacing_mm**2) for code, name in REGION_NAMES.items()}
