"""Learning 3D voxel shape generators from unlabeled 2D silhouettes."""

__version__ = "0.1.0"
