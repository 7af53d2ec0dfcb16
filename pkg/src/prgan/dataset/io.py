"""Readers and writers for PGM images, voxel grids, OBJ meshes and manifests."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VOX_MAGIC = b"PRGVOX1\n"


class FormatError(ValueError):
    """Malformed input file; the message names the byte offset."""


# ---------------------------------------------------------------- PGM (P5)


def encode_pgm(img) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM images are 2-d, got shape {img.shape}")
    pix = np.rint(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)
    h, w = pix.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pix.tobytes()


def write_pgm(path, img):
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img))


def _header_tokens(data: bytes, count: int):
    """Whitespace-separated header tokens (comments skipped) and the data offset."""
    tokens, pos = [], 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated PGM header at byte offset {start}")
        tokens.append((data[start:pos], start))
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos:pos + 1].isspace():
        raise FormatError(f"missing whitespace after PGM header at byte offset {pos}")
    return tokens, pos + 1


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode a binary PGM into floats in [0, 1] (value / maxval)."""
    if data[:2] != b"P5":
        raise FormatError("not a binary PGM (expected 'P5') at byte offset 0")
    tokens, offset = _header_tokens(data, 4)
    vals = []
    for tok, at in tokens[1:]:
        if not tok.isdigit():
            raise FormatError(f"expected an integer in PGM header at byte offset {at}")
        vals.append(int(tok))
    w, h, maxval = vals
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"invalid PGM dimensions or maxval at byte offset {tokens[1][1]}")
    depth = 1 if maxval < 256 else 2
    need = w * h * depth
    if len(data) - offset < need:
        raise FormatError(f"truncated PGM raster at byte offset {len(data)}")
    raw = np.frombuffer(data, dtype=np.uint8 if depth == 1 else ">u2", count=w * h, offset=offset)
    return (raw.reshape(h, w).astype(np.float64) / maxval).astype(np.float32)


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


# ---------------------------------------------------------------- voxel grids


def encode_voxels(grid) -> bytes:
    grid = np.ascontiguousarray(grid, dtype="<f4")
    if grid.ndim != 3:
        raise ValueError(f"voxel grids are 3-d, got shape {grid.shape}")
    header = VOX_MAGIC + b"dims %d %d %d\n" % grid.shape
    return header + grid.tobytes()


def decode_voxels(data: bytes) -> np.ndarray:
    if data[:8] != VOX_MAGIC:
        raise FormatError("bad voxel magic at byte offset 0")
    end = data.find(b"\n", 8)
    if end < 0:
        raise FormatError("unterminated dims line at byte offset 8")
    parts = data[8:end].split()
    if len(parts) != 4 or parts[0] != b"dims" or not all(p.isdigit() for p in parts[1:]):
        raise FormatError("malformed dims line at byte offset 8")
    shape = tuple(int(p) for p in parts[1:])
    need = 4 * int(np.prod(shape))
    body = data[end + 1:]
    if len(body) != need:
        raise FormatError(f"voxel payload size mismatch at byte offset {end + 1 + min(len(body), need)}")
    return np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float32)


def write_voxels(path, grid):
    with open(path, "wb") as fh:
        fh.write(encode_voxels(grid))


def read_voxels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_voxels(fh.read())


# ---------------------------------------------------------------- OBJ subset


def read_obj(path):
    """Vertices and triangles from ``v``/``f`` lines; other records are ignored."""
    from .shapes import TriangleMesh

    verts, faces = [], []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.split(b"#", 1)[0].split()
            if line and line[0] == b"v":
                try:
                    verts.append([float(t) for t in line[1:4]])
                except ValueError:
                    raise FormatError(f"bad vertex at byte offset {offset}") from None
                if len(verts[-1]) != 3:
                    raise FormatError(f"vertex needs 3 coordinates at byte offset {offset}")
            elif line and line[0] == b"f":
                try:
                    idx = [int(t.split(b"/")[0]) for t in line[1:]]
                except ValueError:
                    raise FormatError(f"bad face at byte offset {offset}") from None
                if len(idx) != 3:
                    raise FormatError(f"only triangles are supported (byte offset {offset})")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            offset += len(raw)
    return TriangleMesh(np.array(verts, np.float64).reshape(-1, 3), np.array(faces, np.int64).reshape(-1, 3))


def write_obj(path, mesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %.9g %.9g %.9g\n" % tuple(v))
        for f in mesh.faces:
            fh.write("f %d %d %d\n" % tuple(int(i) + 1 for i in f))


# ---------------------------------------------------------------- manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    shape_id: int
    view: int


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.path} {e.shape_id} {e.view}\n")


def read_manifest(path):
    entries = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            parts = raw.decode("utf-8").split()
            if parts:
                if len(parts) != 3 or not parts[1].lstrip("-").isdigit() or not parts[2].isdigit():
                    raise FormatError(f"malformed manifest line at byte offset {offset}")
                view = int(parts[2])
                if view >= 8:
                    raise FormatError(f"view index {view} out of range at byte offset {offset}")
                entries.append(ManifestEntry(parts[0], int(parts[1]), view))
            offset += len(raw)
    return entries


def load_images(directory, manifest_name: str = "manifest.txt") -> np.ndarray:
    """All manifest images of a dataset directory as ``(N, H, W)`` floats."""
    directory = Path(directory)
    entries = read_manifest(directory / manifest_name)
    if not entries:
        return np.zeros((0, 0, 0), np.float32)
    return np.stack([read_pgm(directory / e.path) for e in entries])


def load_voxel_set(directory, manifest_name: str = "voxels.txt") -> np.ndarray:
    """Voxel grids listed one per line (``<relative-path> <shape-id>``) as ``(N, D, D, D)``."""
    directory = Path(directory)
    manifest = directory / manifest_name
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest}: no voxel manifest (generate the dataset with voxels)")
    paths = [line.split()[0] for line in manifest.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not paths:
        return np.zeros((0, 0, 0, 0), np.float32)
    return np.stack([read_voxels(directory / p) for p in paths])


def atomic_write(path, payload: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
