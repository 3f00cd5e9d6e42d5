"""Mask <-> keypoint-box conversion.

A keypoint box is an axis-aligned rectangle stored as 4 normalized scalars
(x_min, y_min, x_max, y_max); its corners are the 4 regression keypoints.
Ground-truth boxes come from binary segmentation masks: the tight pixel bounds
of the crack, expanded by a one-pixel margin, clamped to the grid, and
normalized by the grid size using half-open pixel bounds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class KeypointBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])

    @property
    def area(self) -> float:
        return max(0.0, self.x_max - self.x_min) * max(0.0, self.y_max - self.y_min)

    def is_ordered(self) -> bool:
        return self.x_min <= self.x_max and self.y_min <= self.y_max


def mask_to_keypoints(mask: np.ndarray) -> Optional[KeypointBox]:
    """Margin-padded normalized box around the mask's nonzero pixels.

    Returns None for an all-zero mask. With pixel bounds (r_min..r_max,
    c_min..c_max) inclusive, the box is the half-open pixel region expanded by
    one pixel on every side and clamped to the grid:
    x_min = (c_min-1)/W, x_max = (c_max+2)/W, likewise for y with H.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask entries must be 0 or 1")
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return None
    h, w = mask.shape
    return KeypointBox(
        x_min=max(0.0, (cols.min() - 1) / w),
        y_min=max(0.0, (rows.min() - 1) / h),
        x_max=min(1.0, (cols.max() + 2) / w),
        y_max=min(1.0, (rows.max() + 2) / h),
    )


def keypoints_to_mask(box: KeypointBox, h: int, w: int) -> np.ndarray:
    """Rasterize a box: pixel (r, c) = 1 iff its cell center lies in the box."""
    if h < 1 or w < 1:
        raise ValueError("mask dimensions must be >= 1")
    if not box.is_ordered():
        raise ValueError("box must satisfy min <= max on both axes")
    if box.area == 0.0:
        return np.zeros((h, w), dtype=np.uint8)
    cx = (np.arange(w) + 0.5) / w
    cy = (np.arange(h) + 0.5) / h
    in_x = (cx >= box.x_min) & (cx <= box.x_max)
    in_y = (cy >= box.y_min) & (cy <= box.y_max)
    return (in_y[:, None] & in_x[None, :]).astype(np.uint8)
