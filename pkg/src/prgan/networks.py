"""PrGAN generator/discriminator and the 2D-GAN / 3D-GAN baselines.

Every layer stores its parameters as :class:`~prgan.autodiff.Node` leaves
named ``"<prefix>/<layer>/<tensor>"`` so a whole model round-trips through
the checkpoint format.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .projection import CANONICAL_VIEWS, Viewpoint, project_view

Z_DIM = 201
SHAPE_DIM = 200
N_VIEWS = 8
INIT_STD = 0.02


class Module:
    """Parameter container with train/eval switching."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._params = {}
        self._bn_states = {}
        self.training = True

    def param(self, name: str, value) -> ad.Node:
        node = ad.parameter(np.asarray(value, np.float32), name=f"{self.prefix}/{name}")
        self._params[name] = node
        return node

    def bn_state(self, name: str, channels: int) -> ad.BatchNormState:
        st = ad.BatchNormState(channels)
        self._bn_states[name] = st
        return st

    def parameters(self) -> list:
        return list(self._params.values())

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def buffers(self) -> dict:
        out = {}
        for name, st in self._bn_states.items():
            out[f"{self.prefix}/{name}/running_mean"] = st.running_mean
            out[f"{self.prefix}/{name}/running_var"] = st.running_var
        return out

    def state_dict(self) -> dict:
        out = {p.name: p.value for p in self._params.values()}
        out.update(self.buffers())
        return out

    def load_state_dict(self, tensors: dict):
        for p in self._params.values():
            if p.name not in tensors:
                raise KeyError(f"checkpoint has no tensor {p.name!r}")
            arr = tensors[p.name]
            if arr.shape != p.value.shape:
                raise ValueError(f"{p.name}: checkpoint shape {arr.shape} != {p.value.shape}")
            p.value = np.array(arr, dtype=np.float32)
            p.zero_grad()
        for name, st in self._bn_states.items():
            st.running_mean = np.array(tensors[f"{self.prefix}/{name}/running_mean"], np.float32)
            st.running_var = np.array(tensors[f"{self.prefix}/{name}/running_var"], np.float32)

    def snapshot_buffers(self):
        return {k: (st.running_mean.copy(), st.running_var.copy()) for k, st in self._bn_states.items()}

    def restore_buffers(self, snap):
        for k, (m, v) in snap.items():
            self._bn_states[k].running_mean = m.copy()
            self._bn_states[k].running_var = v.copy()

    def _normal(self, rng, shape):
        return rng.normal(0.0, INIT_STD, size=shape).astype(np.float32)

    def _batchnorm(self, name, x, update_stats=True):
        st = self._bn_states[name]
        return ad.batchnorm(
            x, self._params[f"{name}/gamma"], self._params[f"{name}/beta"], st,
            train=self.training, update_stats=update_stats,
        )

    def _add_bn(self, name, channels):
        self.param(f"{name}/gamma", np.ones(channels))
        self.param(f"{name}/beta", np.zeros(channels))
        self.bn_state(name, channels)


def _ladder(out_extent: int, stages: int) -> int:
    base = out_extent >> stages
    if base < 1 or base << stages != out_extent:
        raise ValueError(f"extent {out_extent} is not {2 ** stages} times an integer")
    return base


class VoxelGenerator(Module):
    """fc -> (C0 x b^3) -> [BN, ReLU, 5^3 transposed conv] * stages -> sigmoid.

    Defaults are 200 -> 256x4^3 -> 128x8^3 -> 64x16^3 -> 1x32^3.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        channels: Sequence[int] = (256, 128, 64),
        extent: int = 32,
        shape_dim: int = SHAPE_DIM,
        kernel: int = 5,
        batchnorm: bool = True,
        prefix: str = "gen",
        spatial_dims: int = 3,
    ):
        super().__init__(prefix)
        self.channels = tuple(channels)
        self.extent = extent
        self.shape_dim = shape_dim
        self.use_bn = batchnorm
        self.nsp = spatial_dims
        self.base = _ladder(extent, len(self.channels))
        c0 = self.channels[0]
        self.param("fc/W", self._normal(rng, (c0 * self.base ** self.nsp, shape_dim)))
        self.param("fc/b", np.zeros(c0 * self.base ** self.nsp))
        ladder = list(self.channels) + [1]
        for s in range(len(self.channels)):
            if batchnorm:
                self._add_bn(f"bn{s}", ladder[s])
            self.param(f"up{s}/W", self._normal(rng, (ladder[s], ladder[s + 1]) + (kernel,) * self.nsp))
            self.param(f"up{s}/b", np.zeros(ladder[s + 1]))

    def forward(self, z, update_stats: bool = True) -> ad.Node:
        """Map codes ``(N, >= shape_dim)`` to occupancies ``(N, 1, D, ..., D)``."""
        z = ad.as_node(z)
        if z.value.ndim != 2 or z.shape[1] not in (self.shape_dim, self.shape_dim + 1):
            raise ValueError(f"generator expects codes of length {self.shape_dim + 1}, got {z.shape}")
        if z.shape[1] != self.shape_dim:
            z = _take_columns(z, self.shape_dim)
        n = z.shape[0]
        p = self._params
        h = ad.fully_connected(z, p["fc/W"], p["fc/b"])
        h = ad.reshape(h, (n, self.channels[0]) + (self.base,) * self.nsp)
        for s in range(len(self.channels)):
            if self.use_bn:
                h = self._batchnorm(f"bn{s}", h, update_stats)
            h = ad.relu(h)
            h = ad.conv_transpose(h, p[f"up{s}/W"], p[f"up{s}/b"], stride=2)
        return ad.sigmoid(h)

    __call__ = forward


def _take_columns(z: ad.Node, k: int) -> ad.Node:
    full = z.shape

    def bw(g):
        out = np.zeros(full, g.dtype)
        out[:, :k] = g
        return (out,)

    return ad.Node(np.ascontiguousarray(z.value[:, :k]), (z,), bw, "take_columns")


def view_bin(z_last) -> np.ndarray:
    """Quantize the view coordinate in [-1, 1] into one of eight azimuth bins."""
    u = np.asarray(z_last, dtype=np.float64)
    return np.minimum(N_VIEWS - 1, np.floor((u + 1.0) / 2.0 * N_VIEWS)).astype(np.int64)


def viewpoint_select(z) -> Viewpoint:
    """Viewpoint read from the last code coordinate (``theta = 0``)."""
    z = np.asarray(z)
    if z.shape[-1] != Z_DIM:
        raise ValueError(f"latent code must have length {Z_DIM}, got {z.shape[-1]}")
    return CANONICAL_VIEWS[int(view_bin(z[..., -1]))]


def viewpoints_for(codes) -> list:
    codes = np.asarray(codes)
    return [CANONICAL_VIEWS[b] for b in view_bin(codes[:, -1])]


def prgan_images(gen: VoxelGenerator, codes, update_stats: bool = True) -> ad.Node:
    """Projected silhouettes ``(N, D, D)`` for codes ``(N, shape_dim + 1)``.

    The view is a piecewise-constant function of the last coordinate, so
    no gradient reaches it.
    """
    codes = ad.as_node(codes)
    vox = gen.forward(codes, update_stats=update_stats)
    n, d = vox.shape[0], vox.shape[-1]
    grids = ad.reshape(vox, (n, d, d, d))
    return project_view(grids, viewpoints_for(codes.value))


class ImageDiscriminator(Module):
    """conv(stride 2) ladder with BN + LeakyReLU, then fc -> sigmoid.

    Defaults: 32^2 -> 256x16^2 -> 512x8^2 -> 1024x4^2 -> 1. Works for 3D
    inputs when ``spatial_dims=3`` (the 3D-GAN discriminator).
    """

    def __init__(
        self,
        rng: np.random.Generator,
        channels: Sequence[int] = (256, 512, 1024),
        extent: int = 32,
        kernel: int = 5,
        batchnorm: bool = True,
        prefix: str = "disc",
        spatial_dims: int = 2,
        slope: float = 0.2,
    ):
        super().__init__(prefix)
        self.channels = tuple(channels)
        self.extent = extent
        self.nsp = spatial_dims
        self.use_bn = batchnorm
        self.slope = slope
        self.final = _ladder(extent, len(self.channels))
        ladder = [1] + list(self.channels)
        for s in range(len(self.channels)):
            self.param(f"conv{s}/W", self._normal(rng, (ladder[s + 1], ladder[s]) + (kernel,) * self.nsp))
            self.param(f"conv{s}/b", np.zeros(ladder[s + 1]))
            if batchnorm and s > 0:
                self._add_bn(f"bn{s}", ladder[s + 1])
        self.param("fc/W", self._normal(rng, (1, self.channels[-1] * self.final ** self.nsp)))
        self.param("fc/b", np.zeros(1))
        self.activations = []

    def forward(self, x, update_stats: bool = True) -> ad.Node:
        """Probabilities ``(N,)`` for inputs ``(N, D, ..., D)``."""
        x = ad.as_node(x)
        want = (self.extent,) * self.nsp
        if x.value.ndim != self.nsp + 1 or x.shape[1:] != want:
            raise ValueError(f"discriminator expects inputs of shape (N, {want}), got {x.shape}")
        n = x.shape[0]
        p = self._params
        h = ad.reshape(x, (n, 1) + want)
        self.activations = []
        for s in range(len(self.channels)):
            h = ad.conv(h, p[f"conv{s}/W"], p[f"conv{s}/b"], stride=2)
            if self.use_bn and s > 0:
                h = self._batchnorm(f"bn{s}", h, update_stats)
            h = ad.leaky_relu(h, self.slope)
            self.activations.append(h.shape[1:])
        h = ad.reshape(h, (n, int(np.prod(h.shape[1:]))))
        logit = ad.fully_connected(h, p["fc/W"], p["fc/b"])
        return ad.reshape(ad.sigmoid(logit), (n,))

    __call__ = forward


def build_prgan(rng, gen_channels=(256, 128, 64), disc_channels=(256, 512, 1024), extent=32):
    gen = VoxelGenerator(rng, gen_channels, extent)
    disc = ImageDiscriminator(rng, disc_channels, extent)
    return gen, disc


def baseline_2d_generator(rng, channels=(256, 128, 64), extent=32) -> VoxelGenerator:
    """2D-GAN generator: the same ladder with 2D transposed convolutions."""
    return VoxelGenerator(rng, channels, extent, prefix="gen2d", spatial_dims=2)


def baseline_3d_discriminator(rng, channels=(256, 512, 1024), extent=32) -> ImageDiscriminator:
    """3D-GAN discriminator: the same ladder with 3D convolutions."""
    return ImageDiscriminator(rng, channels, extent, prefix="disc3d", spatial_dims=3)


def generator_forward(gen: VoxelGenerator, z) -> np.ndarray:
    """Occupancy grid ``(D, D, D)`` for one code, using batchnorm running statistics."""
    z = np.asarray(z, np.float32)
    if z.shape != (gen.shape_dim + 1,):
        raise ValueError(f"latent code must have length {gen.shape_dim + 1}, got {z.shape}")
    was_training = gen.training
    gen.eval()
    try:
        out = gen.forward(z[None], update_stats=False).value
    finally:
        gen.training = was_training
    return out.reshape(out.shape[2:])


def sample_codes(rng: np.random.Generator, n: int, dim: int = Z_DIM) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(n, dim)).astype(np.float32)


def generator_from_state(tensors: dict, prefix: str = "gen") -> VoxelGenerator:
    """Rebuild a generator whose architecture is read off the checkpoint tensor shapes."""
    stages = 0
    while f"{prefix}/up{stages}/W" in tensors:
        stages += 1
    if stages == 0 or f"{prefix}/fc/W" not in tensors:
        raise ValueError(f"checkpoint holds no generator under prefix {prefix!r}")
    ws = [tensors[f"{prefix}/up{s}/W"].shape for s in range(stages)]
    channels = tuple(w[0] for w in ws)
    nsp = len(ws[0]) - 2
    fc_rows, shape_dim = tensors[f"{prefix}/fc/W"].shape
    base = round((fc_rows // channels[0]) ** (1.0 / nsp))
    if channels[0] * base ** nsp != fc_rows:
        raise ValueError(f"inconsistent generator tensors under prefix {prefix!r}")
    gen = VoxelGenerator(
        np.random.default_rng(0), channels, base << stages, shape_dim, ws[0][2],
        f"{prefix}/bn0/gamma" in tensors, prefix, nsp,
    )
    gen.load_state_dict(tensors)
    return gen
