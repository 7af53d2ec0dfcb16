"""Triangle-mesh voxelization by point sampling.

Points are sampled densely on every triangle and on a regular lattice inside
the mesh (inside-ness by ray-crossing parity along the depth axis); a voxel
is occupied iff it contains at least one sample.
"""

from __future__ import annotations

import math

import numpy as np

from .shapes import TriangleMesh

# tiny irrational offsets keep the parity rays off shared triangle edges
_RAY_JITTER = (1.2345678e-6 * math.sqrt(2), 2.3456789e-6 * math.sqrt(3))


def fit_bounds(meshes) -> tuple:
    """Cube (lo, side) around the meshes' joint bounding box."""
    verts = np.concatenate([m.vertices for m in meshes])
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    side = float((hi - lo).max())
    center = (lo + hi) / 2
    return center - side / 2, side


def to_grid(points, lo, side, extent) -> np.ndarray:
    """World ``(x, y, z)`` (y up) to continuous grid ``(i, j, k)`` (i down)."""
    p = (np.asarray(points, np.float64) - lo) / side * extent
    return np.stack([extent - p[..., 1], p[..., 0], p[..., 2]], axis=-1)


def _surface_samples(tris: np.ndarray, spacing: float = 0.5) -> np.ndarray:
    """Barycentric lattice on each triangle with at most ``spacing`` between samples."""
    edges = np.stack([tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 1], tris[:, 0] - tris[:, 2]], axis=1)
    longest = np.linalg.norm(edges, axis=2).max(axis=1)
    subdiv = np.maximum(1, np.ceil(longest / spacing)).astype(np.int64)
    out = [tris.mean(axis=1)]
    for n in np.unique(subdiv):
        sel = tris[subdiv == n]
        a, b = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = a + b <= n
        a = a[keep] / n
        b = b[keep] / n
        w = np.stack([1 - a - b, a, b], axis=1)
        out.append(np.einsum("pk,tkd->tpd", w, sel).reshape(-1, 3))
    return np.concatenate(out)


def _crossings(tris: np.ndarray, n_rays: int, step: float):
    """Ray index and depth of every triangle crossing for rays along +k.

    Rays sit at ``((r + 0.5) * step, (c + 0.5) * step)`` in (i, j).
    """
    ray_ids, depths = [], []
    ji, jj = _RAY_JITTER
    for t in tris:
        p0, p1, p2 = t
        det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if abs(det) < 1e-12:
            continue
        lo = np.minimum(np.minimum(p0, p1), p2)
        hi = np.maximum(np.maximum(p0, p1), p2)
        r0 = max(0, int(math.floor(lo[0] / step - 0.5)))
        r1 = min(n_rays - 1, int(math.ceil(hi[0] / step - 0.5)))
        c0 = max(0, int(math.floor(lo[1] / step - 0.5)))
        c1 = min(n_rays - 1, int(math.ceil(hi[1] / step - 0.5)))
        if r1 < r0 or c1 < c0:
            continue
        rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
        qi = (rr.ravel() + 0.5) * step + ji
        qj = (cc.ravel() + 0.5) * step + jj
        # barycentric coordinates in the (i, j) projection
        u = ((qi - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (qj - p0[1])) / det
        v = ((p1[0] - p0[0]) * (qj - p0[1]) - (qi - p0[0]) * (p1[1] - p0[1])) / det
        hit = (u >= 0) & (v >= 0) & (u + v <= 1)
        if not hit.any():
            continue
        u, v = u[hit], v[hit]
        depths.append(p0[2] + u * (p1[2] - p0[2]) + v * (p2[2] - p0[2]))
        ray_ids.append(rr.ravel()[hit] * n_rays + cc.ravel()[hit])
    if not ray_ids:
        return np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(ray_ids), np.concatenate(depths)


def _interior(tris: np.ndarray, extent: int, per_axis: int) -> np.ndarray:
    """Parity inside-test on a lattice of ``per_axis`` samples per voxel edge."""
    n = extent * per_axis
    step = 1.0 / per_axis
    rays, depth = _crossings(tris, n, step)
    inside = np.zeros((n, n, n), dtype=bool)
    if rays.size == 0:
        return inside
    span = extent + 4.0
    key = rays * span + np.clip(depth + 2.0, 0.0, span - 1e-9)
    key.sort()
    zs = (np.arange(n) + 0.5) * step + 2.0
    all_rays = np.arange(n * n)
    first = np.searchsorted(key, all_rays * span)
    counts = np.searchsorted(key, all_rays[:, None] * span + zs[None, :]) - first[:, None]
    inside = (counts % 2 == 1).reshape(n, n, n)
    return inside


def voxelize(meshes, extent: int = 32, bounds=None, interior_samples: int = 1) -> np.ndarray:
    """Binary ``extent^3`` occupancy of one mesh or the union of several closed meshes.

    ``bounds`` is ``(lo, side)``: the world cube mapped onto the grid. By
    default the meshes' bounding box is fitted to the grid.
    """
    if isinstance(meshes, TriangleMesh):
        meshes = [meshes]
    meshes = list(meshes)
    if not meshes or sum(m.area() for m in meshes) <= 0.0:
        raise ValueError("degenerate mesh: total surface area is zero")
    lo, side = fit_bounds(meshes) if bounds is None else (np.asarray(bounds[0], np.float64), float(bounds[1]))
    if side <= 0:
        raise ValueError("degenerate mesh: zero extent")
    grid = np.zeros((extent,) * 3, dtype=bool)
    for mesh in meshes:
        tris = to_grid(mesh.triangles(), lo, side, extent)
        pts = _surface_samples(tris)
        idx = np.floor(pts).astype(np.int64)
        # samples on the far faces of the grid belong to the last cell
        edge = np.isclose(pts, extent)
        idx[edge] = extent - 1
        ok = np.all((idx >= 0) & (idx < extent), axis=1)
        grid[tuple(idx[ok].T)] = True
        inside = _interior(tris, extent, interior_samples)
        if interior_samples > 1:
            s = interior_samples
            inside = inside.reshape(extent, s, extent, s, extent, s).any(axis=(1, 3, 5))
        grid |= inside
    return grid.astype(np.float32)
