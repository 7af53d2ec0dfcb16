"""Triangle meshes and procedural shape families.

World coordinates are ``(x, y, z)`` with ``y`` up. Procedural shapes live in
the cube ``[-0.5, 0.5]^3`` and keep their horizontal footprint inside the
inscribed cylinder so no part leaves the grid under azimuthal rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("cuboid-composite", "lathed-profile", "box")


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh has non-finite vertex coordinates")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("mesh face index out of range")

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def area(self) -> float:
        t = self.triangles()
        return float(0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1).sum())

    def translated(self, offset) -> "TriangleMesh":
        return TriangleMesh(self.vertices + np.asarray(offset, np.float64), self.faces.copy())

    @staticmethod
    def merge(meshes) -> "TriangleMesh":
        verts, faces, base = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            faces.append(m.faces + base)
            base += len(m.vertices)
        return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def box_mesh(lo, hi) -> TriangleMesh:
    """Closed, outward-wound axis-aligned box."""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = np.array(
        [[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
         [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]],
        np.float64,
    )
    f = [
        [0, 2, 1], [0, 3, 2],  # z0
        [4, 5, 6], [4, 6, 7],  # z1
        [0, 1, 5], [0, 5, 4],  # y0
        [3, 7, 6], [3, 6, 2],  # y1
        [0, 4, 7], [0, 7, 3],  # x0
        [1, 2, 6], [1, 6, 5],  # x1
    ]
    return TriangleMesh(v, np.array(f))


def lathe_mesh(heights, radii, segments: int = 24) -> TriangleMesh:
    """Surface of revolution about the y axis, capped at both ends."""
    heights = np.asarray(heights, np.float64)
    radii = np.asarray(radii, np.float64)
    rings = len(heights)
    ang = 2 * math.pi * np.arange(segments) / segments
    verts = []
    for h, r in zip(heights, radii):
        verts.append(np.stack([r * np.cos(ang), np.full(segments, h), r * np.sin(ang)], axis=1))
    verts = np.concatenate(verts + [np.array([[0, heights[0], 0], [0, heights[-1], 0]])])
    bottom, top = rings * segments, rings * segments + 1
    faces = []
    for a in range(rings - 1):
        for s in range(segments):
            p, q = a * segments + s, a * segments + (s + 1) % segments
            faces.append([p, p + segments, q])
            faces.append([q, p + segments, q + segments])
    for s in range(segments):
        faces.append([bottom, s, (s + 1) % segments])
        lo = (rings - 1) * segments
        faces.append([top, lo + (s + 1) % segments, lo + s])
    return TriangleMesh(verts, np.array(faces))


def sphere_mesh(radius: float, center=(0.0, 0.0, 0.0), rings: int = 48, segments: int = 96) -> TriangleMesh:
    t = np.linspace(0, math.pi, rings + 1)[1:-1]
    heights = -radius * np.cos(t)
    radii = radius * np.sin(t)
    # close the poles with zero-radius rings
    heights = np.concatenate([[-radius], heights, [radius]])
    radii = np.concatenate([[0.0], radii, [0.0]])
    return lathe_mesh(heights, radii, segments).translated(center)


@dataclass
class ShapeRecipe:
    """A procedural shape: family name, its part parameters and the seed that drew them."""

    family: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def build(self) -> list:
        """Closed part meshes; occupancy is the union of their interiors."""
        if self.family == "box":
            w, h, d = self.params["size"]
            return [box_mesh((-w / 2, -h / 2, -d / 2), (w / 2, h / 2, d / 2))]
        if self.family == "cuboid-composite":
            return _composite_parts(self.params)
        if self.family == "lathed-profile":
            return [lathe_mesh(self.params["heights"], self.params["radii"], self.params.get("segments", 24))]
        raise ValueError(f"unknown shape family {self.family!r}; expected one of {FAMILIES}")


def _composite_parts(p) -> list:
    w, d = p["seat_width"], p["seat_depth"]
    t, leg = p["seat_thickness"], p["leg_size"]
    seat_y, back_h = p["seat_height"], p["back_height"]
    total = seat_y + t + back_h
    y0 = -total / 2
    parts = [box_mesh((-w / 2, y0 + seat_y, -d / 2), (w / 2, y0 + seat_y + t, d / 2))]
    for sx in (-1, 1):
        for sz in (-1, 1):
            cx = sx * (w / 2 - leg / 2)
            cz = sz * (d / 2 - leg / 2)
            parts.append(box_mesh((cx - leg / 2, y0, cz - leg / 2), (cx + leg / 2, y0 + seat_y, cz + leg / 2)))
    if back_h > 0:
        parts.append(box_mesh((-w / 2, y0 + seat_y + t, -d / 2), (w / 2, y0 + total, -d / 2 + t)))
    return parts


def random_recipe(family: str, seed: int) -> ShapeRecipe:
    rng = np.random.default_rng(seed)
    if family == "box":
        size = rng.uniform(0.3, 0.9, size=3)
        foot = math.hypot(size[0], size[2])
        if foot > 0.95:
            size[[0, 2]] *= 0.95 / foot
        return ShapeRecipe(family, {"size": [float(s) for s in size]}, seed)
    if family == "cuboid-composite":
        params = {
            "seat_width": float(rng.uniform(0.45, 0.65)),
            "seat_depth": float(rng.uniform(0.45, 0.65)),
            "seat_thickness": float(rng.uniform(0.07, 0.12)),
            "leg_size": float(rng.uniform(0.07, 0.12)),
            "seat_height": float(rng.uniform(0.3, 0.42)),
            # tables have no back
            "back_height": float(rng.uniform(0.3, 0.42)) if rng.random() < 0.7 else 0.0,
        }
        return ShapeRecipe(family, params, seed)
    if family == "lathed-profile":
        rings = 12
        height = rng.uniform(0.6, 0.95)
        ts = np.linspace(0.0, 1.0, rings)
        base = rng.uniform(0.12, 0.25)
        bulge = rng.uniform(0.05, 0.2)
        freq = rng.uniform(0.6, 1.6)
        phase = rng.uniform(0, math.pi)
        radii = np.clip(base + bulge * np.sin(math.pi * freq * ts + phase), 0.06, 0.45)
        heights = height * (ts - 0.5)
        return ShapeRecipe(family, {"heights": heights.tolist(), "radii": radii.tolist()}, seed)
    raise ValueError(f"unknown shape family {family!r}; expected one of {FAMILIES}")


def random_recipes(family: str, count: int, seed: int) -> list:
    return [random_recipe(family, int(s)) for s in np.random.default_rng(seed).integers(0, 2**31, size=count)]
