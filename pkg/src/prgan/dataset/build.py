"""Dataset assembly: voxelize recipes, render views, write PGMs and manifests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import ManifestEntry, encode_pgm, encode_voxels, write_manifest
from .render import render_views
from .voxelize import voxelize

UNIT_BOUNDS = ((-0.5, -0.5, -0.5), 1.0)
VALID_VIEW_COUNTS = (1, 2, 4, 8)


def recipe_grid(recipe, extent: int) -> np.ndarray:
    return voxelize(recipe.build(), extent, bounds=UNIT_BOUNDS)


def recipe_views(recipe, image_size: int = 32) -> np.ndarray:
    """The eight downsampled silhouettes of a recipe."""
    return render_views(recipe_grid(recipe, 2 * image_size))


def choose_views(views_per_object: int, seed: int, shape_id: int) -> list:
    if views_per_object not in VALID_VIEW_COUNTS:
        raise ValueError(f"views per object must be one of {VALID_VIEW_COUNTS}, got {views_per_object}")
    if views_per_object == 8:
        return list(range(8))
    rng = np.random.default_rng([seed, shape_id])
    return sorted(int(v) for v in rng.choice(8, size=views_per_object, replace=False))


class DatasetManifest:
    """Images in memory plus the manifest entries that name them."""

    def __init__(self, entries, images):
        self.entries = list(entries)
        self.images = images

    def __len__(self):
        return len(self.entries)

    def view_counts(self) -> np.ndarray:
        return np.bincount([e.view for e in self.entries], minlength=8)

    def write(self, out_dir, manifest_name: str = "manifest.txt"):
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        for e, img in zip(self.entries, self.images):
            (out / e.path).write_bytes(encode_pgm(img))
        write_manifest(out / manifest_name, self.entries)


def _entry(shape_id: int, view: int) -> ManifestEntry:
    return ManifestEntry(f"images/s{shape_id:05d}_v{view}.pgm", shape_id, view)


def make_dataset(recipes, views_per_object: int, seed: int, first_id: int = 0, image_size: int = 32) -> DatasetManifest:
    """Render every recipe and keep a seeded random subset of its eight views."""
    entries, images = [], []
    for n, recipe in enumerate(recipes):
        sid = first_id + n
        keep = choose_views(views_per_object, seed, sid)
        views = recipe_views(recipe, image_size)
        for v in keep:
            entries.append(_entry(sid, v))
            images.append(views[v])
    imgs = np.stack(images) if images else np.zeros((0, image_size, image_size), np.float32)
    return DatasetManifest(entries, imgs)


def mixed_category(recipe_sets, views_per_object: int, seed: int, image_size: int = 32) -> DatasetManifest:
    """Concatenate several recipe families and shuffle; no category label survives."""
    recipe_sets = [list(s) for s in recipe_sets]
    if len(recipe_sets) < 2:
        raise ValueError("a mixed category needs at least two recipe sets")
    parts, first = [], 0
    for recipes in recipe_sets:
        parts.append(make_dataset(recipes, views_per_object, seed, first, image_size))
        first += len(recipes)
    entries = [e for p in parts for e in p.entries]
    images = np.concatenate([p.images for p in parts])
    order = np.random.default_rng([seed, 0x6D6978]).permutation(len(entries))
    return DatasetManifest([entries[i] for i in order], images[order])


def write_voxel_set(recipes, out_dir, extent: int = 32, first_id: int = 0):
    """Binary voxel grids (for the 3D-GAN baseline) plus ``voxels.txt``."""
    out = Path(out_dir)
    (out / "voxels").mkdir(parents=True, exist_ok=True)
    lines = []
    for n, recipe in enumerate(recipes):
        sid = first_id + n
        rel = f"voxels/s{sid:05d}.vox"
        (out / rel).write_bytes(encode_voxels(recipe_grid(recipe, extent)))
        lines.append(f"{rel} {sid}\n")
    (out / "voxels.txt").write_text("".join(lines), encoding="utf-8")
