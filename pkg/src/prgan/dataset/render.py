"""Orthographic silhouette rendering from the eight training views."""

from __future__ import annotations

import numpy as np

from ..projection import CANONICAL_VIEWS, hard_project, rotate_grid


def downsample2(img) -> np.ndarray:
    """2x2 box average; preserves total mass divided by four."""
    img = np.asarray(img, np.float32)
    h, w = img.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"cannot halve an image of shape {img.shape}")
    blocks = img.reshape(img.shape[:-2] + (h // 2, 2, w // 2, 2))
    # the four terms are multiples of 1/4 in [0, 1]: the sum is exact in float32
    return (blocks.sum(axis=(-3, -1)) * np.float32(0.25)).astype(np.float32)


def hard_silhouette(grid, vp) -> np.ndarray:
    return hard_project(rotate_grid(np.asarray(grid, np.float32), vp).value)


def render_views(grid64, views=CANONICAL_VIEWS) -> np.ndarray:
    """Binary ``D^3`` grid -> ``(len(views), D/2, D/2)`` downsampled silhouettes."""
    grid64 = np.asarray(grid64, np.float32)
    if grid64.ndim != 3 or len(set(grid64.shape)) != 1:
        raise ValueError(f"render_views expects a cubic grid, got {grid64.shape}")
    batch = np.broadcast_to(grid64, (len(views),) + grid64.shape)
    rotated = rotate_grid(batch, list(views)).value
    return downsample2(hard_project(rotated))
