"""Majority-vote fusion of candidate lung masks and mask post-processing."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage as ndi

from .raster import as_binary_mask, check_same_shape

# true components are 8-connected, background/holes 4-connected
EIGHT = np.ones((3, 3), dtype=bool)
FOUR = ndi.generate_binary_structure(2, 1)


def majority_vote(masks: Sequence) -> np.ndarray:
    """Fuse N binary masks: a pixel is lung when at least half the masks say so.

    Ties at even N count as lung (2 of 4 votes -> lung).
    """
    if len(masks) == 0:
        raise ValueError("majority_vote needs at least one mask")
    arrays = [as_binary_mask(m) for m in masks]
    check_same_shape(*arrays)
    votes = np.sum(np.stack(arrays), axis=0, dtype=np.int64)
    # count >= N/2, kept in integers
    return 2 * votes >= len(arrays)


def fill_holes(mask) -> np.ndarray:
    """Fill every background region that cannot be reached from the border
    through 4-connected background pixels."""
    mask = as_binary_mask(mask)
    return ndi.binary_fill_holes(mask, structure=FOUR)


def label_components(mask) -> tuple[np.ndarray, int]:
    """8-connected labeling; labels are numbered in raster order of each
    component's first pixel."""
    return ndi.label(as_binary_mask(mask), structure=EIGHT)


def remove_isolated(mask, keep: int = 2) -> np.ndarray:
    """Keep the ``keep`` largest 8-connected components.

    Equal areas are ordered by the component's first pixel in raster order.
    """
    if keep < 1:
        raise ValueError("keep must be >= 1")
    labels, n = label_components(mask)
    if n <= keep:
        return labels > 0
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    # label k has its first pixel before label k+1, so a stable sort on
    # -area breaks ties by first-pixel index
    order = np.argsort(-areas, kind="stable")
    kept = order[:keep] + 1
    return np.isin(labels, kept)


def postprocess(mask, keep: int = 2) -> np.ndarray:
    """Hole filling followed by isolated-region removal."""
    return remove_isolated(fill_holes(mask), keep=keep)


def fuse(masks: Sequence, keep: int = 2) -> np.ndarray:
    return postprocess(majority_vote(masks), keep=keep)


def split_left_right(mask, fallback_column: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Separate a two-lung mask into (right_lung, left_lung).

    The patient's right lung is displayed on the viewer's left, so the
    component with the smaller centroid column is the right lung. A single
    fused component is cut at ``fallback_column``: columns before it go to
    the right lung.
    """
    mask = as_binary_mask(mask)
    labels, n = label_components(mask)
    if n == 0:
        raise ValueError("cannot split an empty lung mask")
    if n == 1:
        if fallback_column is None:
            raise ValueError("lungs form a single component and no fallback column was given")
        cols = np.arange(mask.shape[1])[None, :]
        right = mask & (cols < fallback_column)
        return right, mask & ~right
    if n > 2:
        raise ValueError(f"expected at most 2 components, found {n}; run remove_isolated first")
    _, xs = np.nonzero(labels)
    cx = np.bincount(labels[labels > 0] - 1, weights=xs) / np.bincount(labels[labels > 0] - 1)
    right_label = 1 if cx[0] <= cx[1] else 2
    right = labels == right_label
    return right, mask & ~right
