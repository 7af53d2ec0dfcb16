"""Adversarial training for PrGAN and the 2D-GAN / 3D-GAN baselines."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .networks import (
    SHAPE_DIM,
    Z_DIM,
    ImageDiscriminator,
    VoxelGenerator,
    baseline_2d_generator,
    baseline_3d_discriminator,
    prgan_images,
    sample_codes,
)

log = logging.getLogger(__name__)

MODELS = ("prgan", "gan2d", "gan3d")


class NonFiniteLossError(RuntimeError):
    pass


def _int_tuple(text):
    if isinstance(text, str):
        return tuple(int(t) for t in text.replace(",", " ").split())
    return tuple(int(t) for t in text)


@dataclass
class TrainConfig:
    model: str = "prgan"
    lr_discriminator: float = 1e-5
    lr_generator: float = 0.0025
    beta1: float = 0.5
    skip_threshold: float = 0.75
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    gen_channels: tuple = (256, 128, 64)
    disc_channels: tuple = (256, 512, 1024)
    extent: int = 32
    checkpoint_every: int = 1
    literal_loss: bool = False
    max_steps: int = 0

    def __post_init__(self):
        self.gen_channels = _int_tuple(self.gen_channels)
        self.disc_channels = _int_tuple(self.disc_channels)
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.lr_discriminator <= 0 or self.lr_generator <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.5 < self.skip_threshold <= 1.0:
            raise ValueError(f"skip threshold must lie in (0.5, 1], got {self.skip_threshold}")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2 (batchnorm)")

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse ``key = value`` lines; explicit ``overrides`` win."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in fields:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(fields[key], value)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = " ".join(str(c) for c in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(field, value: str):
    default = field.default
    if isinstance(default, bool):
        if value.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"{field.name}: expected a boolean, got {value!r}")
        return value.lower() in ("true", "1")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return _int_tuple(value)
    return value


@dataclass
class LogEntry:
    step: int
    d_acc: float
    d_loss: float
    g_loss: float
    skipped: bool

    def line(self) -> str:
        return (
            f"step {self.step} d_acc {self.d_acc:.6f} d_loss {self.d_loss:.6f} "
            f"g_loss {self.g_loss:.6f} skipped {int(self.skipped)}"
        )

    @classmethod
    def parse(cls, line: str) -> "LogEntry":
        t = line.split()
        if len(t) != 10 or t[0::2] != ["step", "d_acc", "d_loss", "g_loss", "skipped"]:
            raise ValueError(f"malformed log line: {line!r}")
        return cls(int(t[1]), float(t[3]), float(t[5]), float(t[7]), t[9] == "1")


def discriminator_accuracy(p_real, p_fake) -> float:
    """Fraction of the pooled minibatch classified correctly at threshold 0.5."""
    correct = np.count_nonzero(np.asarray(p_real) > 0.5) + np.count_nonzero(np.asarray(p_fake) <= 0.5)
    return correct / (np.size(p_real) + np.size(p_fake))


class GanTrainer:
    """Owns one generator/discriminator pair and their optimizers."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0])
        if cfg.model == "prgan":
            self.gen = VoxelGenerator(rng, cfg.gen_channels, cfg.extent)
            self.disc = ImageDiscriminator(rng, cfg.disc_channels, cfg.extent)
        elif cfg.model == "gan2d":
            self.gen = baseline_2d_generator(rng, cfg.gen_channels, cfg.extent)
            self.disc = ImageDiscriminator(rng, cfg.disc_channels, cfg.extent)
        else:
            self.gen = VoxelGenerator(rng, cfg.gen_channels, cfg.extent)
            self.disc = baseline_3d_discriminator(rng, cfg.disc_channels, cfg.extent)
        self.opt_g = ad.Adam(self.gen.parameters(), cfg.lr_generator, cfg.beta1)
        self.opt_d = ad.Adam(self.disc.parameters(), cfg.lr_discriminator, cfg.beta1)
        self.step_count = 0
        self.epoch = 0

    # -- sampling

    def fake(self, codes, update_stats: bool = True) -> ad.Node:
        """Generator output in the discriminator's input space."""
        n = codes.shape[0]
        d = self.cfg.extent
        if self.cfg.model == "prgan":
            return prgan_images(self.gen, codes, update_stats)
        out = self.gen.forward(codes[:, :SHAPE_DIM], update_stats)
        shape = (n, d, d) if self.cfg.model == "gan2d" else (n, d, d, d)
        return ad.reshape(out, shape)

    def sample(self, n: int, rng: np.random.Generator, batch: int = 64) -> np.ndarray:
        """``n`` generated samples with the generator in eval mode."""
        self.gen.eval()
        out = []
        for start in range(0, n, batch):
            codes = sample_codes(rng, min(batch, n - start))
            out.append(self.fake(codes, update_stats=False).value)
        self.gen.train()
        return np.concatenate(out) if out else np.zeros((0,), np.float32)

    # -- one adversarial iteration

    def gan_step(self, real: np.ndarray, codes: Optional[np.ndarray] = None) -> LogEntry:
        cfg = self.cfg
        real = np.asarray(real, np.float32)
        b = real.shape[0]
        if codes is None:
            codes = sample_codes(np.random.default_rng([cfg.seed, 1, self.step_count]), b)
        self.step_count += 1
        fake = self.fake(codes)
        acc, d_loss_value, skipped = self.discriminator_step(real, fake.value)

        self.gen.zero_grad()
        p_gen = self.disc.forward(fake, update_stats=False)
        if cfg.literal_loss:
            # minimize log(1 - D(G(z))) directly
            g_loss = ad.scale(ad.bce_terms(p_gen, 0.0), -1.0)
        else:
            g_loss = ad.bce_terms(p_gen, 1.0)
        g_loss_value = g_loss.value.item()
        _check_finite("generator", g_loss_value, self.step_count)
        ad.backward(g_loss)
        self.opt_g.step()
        self.disc.zero_grad()
        return LogEntry(self.step_count, acc, d_loss_value, g_loss_value, skipped)

    def discriminator_step(self, real, fake, skip_rule: bool = True):
        """Score both batches; update D unless the skip rule fires.

        Returns ``(accuracy, loss, skipped)``. A skipped step leaves every D
        parameter, optimizer moment and batchnorm buffer untouched.
        """
        buffers = self.disc.snapshot_buffers()
        self.disc.zero_grad()
        p_real = self.disc.forward(np.asarray(real, np.float32))
        p_fake = self.disc.forward(ad.Node(np.asarray(fake, np.float32)))
        acc = discriminator_accuracy(p_real.value, p_fake.value)
        d_loss = ad.add(ad.bce_terms(p_real, 1.0), ad.bce_terms(p_fake, 0.0))
        d_loss_value = d_loss.value.item()
        _check_finite("discriminator", d_loss_value, self.step_count)
        skipped = skip_rule and acc > self.cfg.skip_threshold
        if skipped:
            self.disc.restore_buffers(buffers)
        else:
            ad.backward(d_loss)
            self.opt_d.step()
        return acc, d_loss_value, skipped

    # -- persistence

    def state_dict(self) -> dict:
        out = {}
        out.update(self.gen.state_dict())
        out.update(self.disc.state_dict())
        out.update(self.opt_g.state_dict("opt_gen"))
        out.update(self.opt_d.state_dict("opt_disc"))
        out["train/step"] = np.array([self.step_count], np.float32)
        out["train/epoch"] = np.array([self.epoch], np.float32)
        return out

    def load_state_dict(self, tensors: dict):
        self.gen.load_state_dict(tensors)
        self.disc.load_state_dict(tensors)
        if "opt_gen/step" in tensors:
            self.opt_g.load_state_dict("opt_gen", tensors)
            self.opt_d.load_state_dict("opt_disc", tensors)
        self.step_count = int(tensors.get("train/step", [0])[0])
        self.epoch = int(tensors.get("train/epoch", [0])[0])


def _check_finite(which: str, value: float, step: int):
    if not math.isfinite(value):
        raise NonFiniteLossError(f"{which} loss is {value} at step {step}; last checkpoint kept")


def batches_per_epoch(n: int, batch_size: int) -> int:
    return max(1, n // batch_size)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int):
    """Seeded shuffled minibatch indices; an incomplete trailing batch is dropped."""
    order = np.random.default_rng([seed, 2, epoch]).permutation(n)
    size = min(batch_size, n)
    return [order[i * size:(i + 1) * size] for i in range(batches_per_epoch(n, batch_size))]


@dataclass
class TrainResult:
    trainer: GanTrainer
    log: list
    checkpoints: list
    seconds: float


def checkpoint_name(epoch: int) -> str:
    return f"ckpt_{epoch:05d}.prg"


def latest_checkpoint(out_dir) -> Optional[Path]:
    marker = Path(out_dir) / "latest.txt"
    if not marker.exists():
        return None
    return Path(out_dir) / marker.read_text().strip()


def train(data: np.ndarray, cfg: TrainConfig, out_dir=None, resume: bool = False, on_step=None) -> TrainResult:
    """Run ``cfg.epochs`` epochs over ``data`` (images or voxel grids).

    With ``out_dir`` set, checkpoints land there every ``cfg.checkpoint_every``
    epochs and every step is appended to ``train_log.txt``.
    """
    data = np.asarray(data, np.float32)
    if len(data) == 0:
        raise ValueError("training data is empty")
    want = (cfg.extent,) * (3 if cfg.model == "gan3d" else 2)
    if data.shape[1:] != want:
        kind = "voxel grids" if cfg.model == "gan3d" else "images"
        raise ValueError(f"{cfg.model} trains on {kind} of shape {want}, got samples of shape {data.shape[1:]}")
    trainer = GanTrainer(cfg)
    entries, ckpts = [], []
    log_fh = None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.txt"
        latest = latest_checkpoint(out) if resume else None
        if latest is not None:
            trainer.load_state_dict(ad.load_checkpoint(latest))
            kept = []
            if log_path.exists():
                kept = [LogEntry.parse(l) for l in log_path.read_text().splitlines() if l.strip()]
                kept = [e for e in kept if e.step <= trainer.step_count]
            entries.extend(kept)
            log_path.write_text("".join(e.line() + "\n" for e in kept))
            log.info("resumed from %s at epoch %d", latest, trainer.epoch)
        elif log_path.exists():
            log_path.unlink()
        log_fh = open(log_path, "a")
    t0 = time.perf_counter()
    try:
        while trainer.epoch < cfg.epochs:
            for idx in epoch_batches(len(data), cfg.batch_size, cfg.seed, trainer.epoch):
                entry = trainer.gan_step(data[idx])
                entries.append(entry)
                if log_fh is not None:
                    log_fh.write(entry.line() + "\n")
                    log_fh.flush()
                if on_step is not None:
                    on_step(entry)
                if cfg.max_steps and trainer.step_count >= cfg.max_steps:
                    break
            trainer.epoch += 1
            done = cfg.max_steps and trainer.step_count >= cfg.max_steps
            if out is not None and (trainer.epoch % cfg.checkpoint_every == 0 or trainer.epoch == cfg.epochs or done):
                name = checkpoint_name(trainer.epoch)
                ad.save_checkpoint(out / name, trainer.state_dict())
                (out / "latest.txt").write_text(name + "\n")
                ckpts.append(out / name)
            if done:
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(trainer, entries, ckpts, time.perf_counter() - t0)


def load_trainer(path, cfg: TrainConfig) -> GanTrainer:
    trainer = GanTrainer(cfg)
    trainer.load_state_dict(ad.load_checkpoint(path))
    return trainer


__all__ = [
    "MODELS",
    "Z_DIM",
    "GanTrainer",
    "LogEntry",
    "NonFiniteLossError",
    "TrainConfig",
    "TrainResult",
    "batches_per_epoch",
    "discriminator_accuracy",
    "epoch_batches",
    "latest_checkpoint",
    "load_trainer",
    "train",
]
