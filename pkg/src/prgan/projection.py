"""Differentiable projection of voxel grids to silhouettes.

Grids are indexed ``V[i, j, k]`` with ``i`` the image row (vertical axis,
pointing down), ``j`` the image column and ``k`` the depth along the viewing
ray. Rotation happens about the grid centre ``(D - 1) / 2`` by nearest
neighbour resampling; projection integrates occupancy along ``k`` with
exponential falloff, ``P = 1 - exp(-sum_k V)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from .autodiff import Node, as_node

# rotated coordinates are snapped to this many decimals before rounding so
# that exact ties (e.g. the diagonal under 45 degrees) always round up
_SNAP_DECIMALS = 6


@dataclass(frozen=True)
class Viewpoint:
    """Elevation ``theta`` and azimuth ``phi``, in radians."""

    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not -math.pi / 2 - 1e-12 <= self.theta <= math.pi / 2 + 1e-12:
            raise ValueError(f"elevation {self.theta} outside [-pi/2, pi/2]")
        if not 0.0 <= self.phi < 2 * math.pi:
            raise ValueError(f"azimuth {self.phi} outside [0, 2 pi)")

    @classmethod
    def from_degrees(cls, theta: float = 0.0, phi: float = 0.0) -> "Viewpoint":
        return cls(math.radians(theta), math.radians(phi % 360.0))


#: the eight azimuthal training views, phi = 0, 45, ..., 315 degrees
CANONICAL_VIEWS = tuple(Viewpoint.from_degrees(0.0, 45.0 * b) for b in range(8))


@lru_cache(maxsize=256)
def _gather_index(extent: int, theta: float, phi: float) -> np.ndarray:
    """Flat source index for every output voxel; -1 marks out-of-bounds reads."""
    d = extent
    c0 = (d - 1) / 2.0
    i, j, k = np.meshgrid(np.arange(d), np.arange(d), np.arange(d), indexing="ij")
    y = i.ravel() - c0
    x = j.ravel() - c0
    z = k.ravel() - c0
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(phi), math.sin(phi)
    # inverse of (elevation about the column axis) o (azimuth about the vertical axis)
    y1 = ct * y + st * z
    z1 = -st * y + ct * z
    x2 = cp * x - sp * z1
    z2 = sp * x + cp * z1
    src = []
    for coord in (y1, x2, z2):
        snapped = np.round(coord + c0, _SNAP_DECIMALS)
        src.append(np.floor(snapped + 0.5).astype(np.int64))
    si, sj, sk = src
    inside = (si >= 0) & (si < d) & (sj >= 0) & (sj < d) & (sk >= 0) & (sk < d)
    flat = np.where(inside, (si * d + sj) * d + sk, -1)
    flat.setflags(write=False)
    return flat


def gather_index(extent: int, vp: Viewpoint) -> np.ndarray:
    return _gather_index(int(extent), float(vp.theta), float(vp.phi))


def _as_views(views, n):
    if isinstance(views, Viewpoint):
        return [views] * n
    views = list(views)
    if len(views) != n:
        raise ValueError(f"{len(views)} viewpoints for a batch of {n} grids")
    return views


def rotate_grid(grid, views: Union[Viewpoint, Sequence[Viewpoint]]) -> Node:
    """Resample ``grid`` (``(D, D, D)`` or ``(N, D, D, D)``) to the given view(s).

    The backward pass is the exact scatter-add adjoint of the gather.
    """
    g = as_node(grid)
    single = g.value.ndim == 3
    v = g.value[None] if single else g.value
    if v.ndim != 4 or not (v.shape[1] == v.shape[2] == v.shape[3]):
        raise ValueError(f"rotate_grid expects cubic grids, got shape {g.shape}")
    n, d = v.shape[0], v.shape[1]
    views = _as_views(views, n)
    cells = d ** 3
    flat = v.reshape(n, cells)
    out = np.empty_like(flat)
    index = np.empty((n, cells), dtype=np.int64)
    for vp in dict.fromkeys(views):
        rows = np.array([r for r, w in enumerate(views) if w == vp])
        idx = gather_index(d, vp)
        valid = idx >= 0
        safe = np.where(valid, idx, 0)
        out[rows] = np.where(valid, flat[rows][:, safe], 0)
        index[rows] = idx
    out = out.reshape(v.shape)
    if single:
        out = out[0]

    def bw(grad):
        gr = grad.reshape(n, cells)
        valid = index >= 0
        target = (np.arange(n)[:, None] * cells + index)[valid]
        acc = np.bincount(target, weights=gr[valid], minlength=n * cells)
        return (acc.astype(gr.dtype).reshape(g.shape),)

    return Node(out, (g,), bw, "rotate_grid")


def project(grid) -> Node:
    """Silhouette ``1 - exp(-sum_k V[..., k])`` of a grid or batch of grids."""
    g = as_node(grid)
    v = g.value
    if v.ndim not in (3, 4):
        raise ValueError(f"project expects (D, D, D) or (N, D, D, D), got {g.shape}")
    total = np.sum(v, axis=-1, dtype=np.float64)
    img = (-np.expm1(-total)).astype(v.dtype)
    falloff = np.exp(-total).astype(v.dtype)

    def bw(grad):
        return (np.broadcast_to((grad * falloff)[..., None], v.shape).copy(),)

    return Node(img, (g,), bw, "project")


def project_view(grid, views: Union[Viewpoint, Sequence[Viewpoint]]) -> Node:
    return project(rotate_grid(grid, views))


def hard_project(grid: np.ndarray) -> np.ndarray:
    """Binary silhouette: 1 wherever any voxel along the ray is occupied."""
    return np.any(np.asarray(grid) > 0, axis=-1).astype(np.float32)
