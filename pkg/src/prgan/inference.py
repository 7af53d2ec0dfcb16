"""Encoding network, shape/view recovery from one silhouette, and latent interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .networks import (
    Module,
    VoxelGenerator,
    Z_DIM,
    generator_forward,
    prgan_images,
    sample_codes,
    view_bin,
)

IMAGE_SIZE = 32


@dataclass
class EncodingPairs:
    """Silhouettes ``(n, 32, 32)`` and the codes ``(n, 201)`` that produced them."""

    images: np.ndarray
    codes: np.ndarray

    def __len__(self):
        return len(self.codes)

    def split(self, n_first: int):
        return (
            EncodingPairs(self.images[:n_first], self.codes[:n_first]),
            EncodingPairs(self.images[n_first:], self.codes[n_first:]),
        )


def synthesize_pairs(gen: VoxelGenerator, n: int, seed: int, batch: int = 256) -> EncodingPairs:
    """``n`` iid codes from U(-1, 1)^(shape_dim + 1) with their projected images.

    The generator runs on batchnorm running statistics, so each image
    depends only on its own code.
    """
    d = gen.extent
    codes = sample_codes(np.random.default_rng(seed), n, gen.shape_dim + 1)
    images = np.empty((n, d, d), np.float32)
    was_training = gen.training
    gen.eval()
    try:
        for start in range(0, n, batch):
            sl = slice(start, min(n, start + batch))
            images[sl] = prgan_images(gen, codes[sl], update_stats=False).value
    finally:
        gen.training = was_training
    return EncodingPairs(images, codes)


class Encoder(Module):
    """Fully connected 1024 -> 512 -> 512 -> 201 with leaky-relu hidden units."""

    def __init__(self, rng: np.random.Generator, hidden=(512, 512), image_size: int = IMAGE_SIZE,
                 out_dim: int = Z_DIM, slope: float = 0.2, prefix: str = "enc"):
        super().__init__(prefix)
        self.image_size = image_size
        self.slope = slope
        sizes = [image_size * image_size] + list(hidden) + [out_dim]
        self.depth = len(sizes) - 1
        for i in range(self.depth):
            self.param(f"fc{i}/W", self._normal(rng, (sizes[i + 1], sizes[i])))
            self.param(f"fc{i}/b", np.zeros(sizes[i + 1]))

    def forward(self, images) -> ad.Node:
        """Unclamped codes ``(N, 201)``; gradients flow through this path."""
        x = ad.as_node(images)
        s = self.image_size
        if x.value.ndim != 3 or x.shape[1:] != (s, s):
            raise ValueError(f"encoder expects images of shape (N, {s}, {s}), got {x.shape}")
        h = ad.reshape(x, (x.shape[0], s * s))
        p = self._params
        for i in range(self.depth):
            h = ad.fully_connected(h, p[f"fc{i}/W"], p[f"fc{i}/b"])
            if i < self.depth - 1:
                h = ad.leaky_relu(h, self.slope)
        return h

    __call__ = forward

    def predict(self, images) -> np.ndarray:
        """Codes clamped to [-1, 1], as used at inference time."""
        return np.clip(self.forward(images).value, -1.0, 1.0)


@dataclass
class EncoderTraining:
    encoder: Encoder
    losses: list


def train_encoder(pairs: EncodingPairs, epochs: int = 10, lr: float = 1e-4, batch_size: int = 64,
                  seed: int = 0, encoder: Encoder = None) -> EncoderTraining:
    """Fit the encoder by ADAM on mean squared code error; returns per-epoch mean losses."""
    n = len(pairs)
    if n == 0:
        raise ValueError("cannot train the encoder on an empty pair set")
    if encoder is None:
        encoder = Encoder(np.random.default_rng([seed, 0]))
    opt = ad.Adam(encoder.parameters(), lr)
    images = np.asarray(pairs.images, np.float32)
    codes = np.asarray(pairs.codes, np.float32)
    losses = []
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 3, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            encoder.zero_grad()
            loss = ad.mse(encoder.forward(images[idx]), codes[idx])
            ad.backward(loss)
            opt.step()
            total += loss.value.item() * len(idx)
        losses.append(total / n)
    return EncoderTraining(encoder, losses)


def code_mse(encoder: Encoder, pairs: EncodingPairs) -> float:
    """Mean squared error per coordinate of the clamped predictions."""
    pred = encoder.predict(pairs.images).astype(np.float64)
    return float(np.mean((pred - pairs.codes.astype(np.float64)) ** 2))


def encode(encoder: Encoder, image) -> np.ndarray:
    """Code of length 201 in [-1, 1] for a single silhouette."""
    image = np.asarray(image, np.float32)
    s = encoder.image_size
    if image.shape != (s, s):
        raise ValueError(f"encode expects a {s}x{s} image, got shape {image.shape}")
    return encoder.predict(image[None])[0]


def predicted_view(code) -> int:
    """View bin read from the last coordinate alone."""
    return int(view_bin(np.asarray(code)[-1]))


def reconstruct(gen: VoxelGenerator, encoder: Encoder, image) -> tuple:
    """Voxel grid and view bin recovered from one silhouette."""
    code = encode(encoder, image)
    return generator_forward(gen, code), predicted_view(code)


def interpolate(gen: VoxelGenerator, z_a, z_b, steps: int) -> np.ndarray:
    """Grids for ``(1 - t) z_a + t z_b`` at ``steps`` evenly spaced ``t`` in [0, 1].

    Frames are generated one at a time, so the endpoints reproduce
    ``generator_forward(z_a)`` and ``generator_forward(z_b)`` exactly.
    """
    if steps < 2:
        raise ValueError(f"interpolation needs at least 2 steps, got {steps}")
    z_a = np.asarray(z_a, np.float32)
    z_b = np.asarray(z_b, np.float32)
    if z_a.shape != z_b.shape:
        raise ValueError(f"endpoint codes differ in shape: {z_a.shape} vs {z_b.shape}")
    frames = []
    for i in range(steps):
        t = np.float32(i / (steps - 1))
        # coordinates where the endpoints agree are held fixed exactly
        z = np.where(z_a == z_b, z_a, (np.float32(1) - t) * z_a + t * z_b)
        frames.append(generator_forward(gen, z))
    return np.stack(frames)


def iou(a, b, threshold: float = 0.5) -> float:
    """Intersection over union of two grids binarized at ``threshold``; 1 if both empty."""
    a = np.asarray(a) > threshold
    b = np.asarray(b) > threshold
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union
