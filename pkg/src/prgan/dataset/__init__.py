"""Procedural shapes, voxelization and silhouette datasets."""

from .build import DatasetManifest, make_dataset, mixed_category, recipe_grid, recipe_views, write_voxel_set
from .io import (
    FormatError,
    ManifestEntry,
    load_images,
    load_voxel_set,
    read_manifest,
    read_obj,
    read_pgm,
    read_voxels,
    write_manifest,
    write_obj,
    write_pgm,
    write_voxels,
)
from .render import downsample2, hard_silhouette, render_views
from .shapes import FAMILIES, ShapeRecipe, TriangleMesh, box_mesh, lathe_mesh, random_recipe, random_recipes, sphere_mesh
from .voxelize import voxelize
