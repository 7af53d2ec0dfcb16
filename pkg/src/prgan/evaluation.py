"""Maximum Mean Discrepancy on binarized samples with normalized Hamming distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

IMAGE_BANDWIDTH = 1e-3
VOXEL_BANDWIDTH = 1e-2
PRGAN_THRESHOLD = 1e-3
GAN3D_THRESHOLD = 0.1
KERNELS = ("gaussian", "laplacian")
ESTIMATORS = ("u", "v")


@dataclass(frozen=True)
class MmdConfig:
    bandwidth: float = IMAGE_BANDWIDTH
    kernel: str = "gaussian"
    estimator: str = "u"
    samples: int = 128
    threshold: float = PRGAN_THRESHOLD

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.samples < 2:
            raise ValueError(f"sample count must be at least 2, got {self.samples}")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")


def binarize(x, tau: float) -> np.ndarray:
    """1 where ``x > tau``, else 0."""
    if not 0 < tau < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    return (np.asarray(x) > tau).astype(np.float32)


def hamming_dist(a, b) -> float:
    """Fraction of entries in which two binary arrays differ."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"hamming_dist: shapes {a.shape} and {b.shape} differ")
    return float(np.count_nonzero(a != b)) / a.size


def pairwise_hamming(A, B) -> np.ndarray:
    """Normalized Hamming distances between rows of two binary sample sets."""
    A = np.asarray(A, np.float64).reshape(len(A), -1)
    B = np.asarray(B, np.float64).reshape(len(B), -1)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"sample dimensionality differs: {A.shape[1]} vs {B.shape[1]}")
    # integer-valued products are exact in float64
    diff = A.sum(1)[:, None] + B.sum(1)[None, :] - 2.0 * (A @ B.T)
    return diff / A.shape[1]


def kernel_matrix(A, B, cfg: MmdConfig) -> np.ndarray:
    d = pairwise_hamming(A, B)
    if cfg.kernel == "gaussian":
        return np.exp(-(d * d) / (2.0 * cfg.bandwidth))
    return np.exp(-d / cfg.bandwidth)


def _mean(K, offdiag: bool = False) -> float:
    # fsum is correctly rounded, so the result ignores summation order
    if offdiag:
        n = K.shape[0]
        vals = K[~np.eye(n, dtype=bool)]
        return math.fsum(vals.tolist()) / (n * (n - 1))
    return math.fsum(K.ravel().tolist()) / K.size


def mmd(A, B, cfg: MmdConfig = MmdConfig()) -> float:
    """Squared-MMD estimate between two sets of binary samples.

    The U-statistic drops the diagonal of the within-set kernel matrices and
    is unbiased; the V-statistic keeps it and is never negative.
    """
    if len(A) < 2 or len(B) < 2:
        raise ValueError(f"mmd needs at least 2 samples per set, got {len(A)} and {len(B)}")
    kaa = kernel_matrix(A, A, cfg)
    kbb = kernel_matrix(B, B, cfg)
    kab = kernel_matrix(A, B, cfg)
    if cfg.estimator == "u":
        return _mean(kaa, True) + _mean(kbb, True) - 2.0 * _mean(kab)
    return _mean(kaa) + _mean(kbb) - 2.0 * _mean(kab)


def mmd_between(generated, reference, cfg: MmdConfig, rng=None, ref_threshold=None) -> float:
    """Binarize both sets, draw ``cfg.samples`` from each, and estimate MMD."""
    rng = np.random.default_rng(0) if rng is None else rng
    tau_ref = cfg.threshold if ref_threshold is None else ref_threshold

    def draw(x):
        x = np.asarray(x)
        if len(x) <= cfg.samples:
            return x
        return x[np.sort(rng.choice(len(x), size=cfg.samples, replace=False))]

    return mmd(binarize(draw(generated), cfg.threshold), binarize(draw(reference), tau_ref), cfg)


def format_result(value: float, n_a: int, n_b: int, bandwidth: float) -> str:
    return f"mmd {value:.9g} n_a {n_a} n_b {n_b} bandwidth {bandwidth:g}"
