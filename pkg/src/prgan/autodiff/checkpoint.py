"""Binary tensor checkpoints (``PRGCKPT1``)."""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"PRGCKPT1"


class CheckpointError(ValueError):
    pass


def encode_checkpoint(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> dict:
    if data[:8] != MAGIC:
        raise CheckpointError("bad magic at byte offset 0")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint at byte offset {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        at = pos
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"invalid UTF-8 tensor name at byte offset {at}") from None
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise CheckpointError(f"trailing bytes at byte offset {pos}")
    return out


def save_checkpoint(path, tensors: dict):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_checkpoint(tensors))
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
