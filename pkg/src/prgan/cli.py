"""Command-line entry points: ``prgan <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataset import (
    FAMILIES,
    FormatError,
    load_images,
    load_voxel_set,
    make_dataset,
    mixed_category,
    random_recipes,
    read_pgm,
    read_voxels,
)
from .dataset.io import encode_pgm, encode_voxels
from .dataset.build import write_voxel_set
from .evaluation import (
    GAN3D_THRESHOLD,
    IMAGE_BANDWIDTH,
    PRGAN_THRESHOLD,
    VOXEL_BANDWIDTH,
    MmdConfig,
    format_result,
    mmd_between,
)
from .inference import Encoder, encode, interpolate, predicted_view, synthesize_pairs, train_encoder
from .networks import generator_from_state, prgan_images, sample_codes, view_bin
from .projection import CANONICAL_VIEWS, project_view
from .training import MODELS, NonFiniteLossError, TrainConfig, train

log = logging.getLogger("prgan")

CONTACT_VIEWS = (0, 2, 1)  # front, side, three-quarter


class CliError(Exception):
    pass


class Outputs:
    """Tracks files written by a command so a failed run leaves nothing half-done."""

    def __init__(self, root):
        self.root = Path(root)
        self.files = []
        self.dirs = []

    def mkdir(self, path):
        path = Path(path)
        missing = []
        for p in [path] + list(path.parents):
            if p.exists():
                break
            missing.append(p)
        path.mkdir(parents=True, exist_ok=True)
        self.dirs.extend(missing)

    def write(self, rel, payload: bytes) -> Path:
        path = self.root / rel
        self.mkdir(path.parent)
        tmp = path.with_name(path.name + ".tmp")
        self.files.append(tmp)
        tmp.write_bytes(payload)
        os.replace(tmp, path)
        self.files.append(path)
        return path

    def discard(self):
        for f in self.files:
            if f.exists():
                f.unlink()
        # innermost directories first
        for d in sorted(self.dirs, key=lambda p: len(p.parts), reverse=True):
            if d.exists() and not any(d.iterdir()):
                d.rmdir()


def _run_with_outputs(root, body):
    out = Outputs(root)
    try:
        body(out)
    except BaseException:
        out.discard()
        raise


# ------------------------------------------------------------------ commands


def cmd_gen_data(args):
    families = args.family.split(",")
    for fam in families:
        if fam not in FAMILIES:
            raise CliError(f"unknown family {fam!r}; expected one of {', '.join(FAMILIES)}")
    sets = [random_recipes(fam, args.count, args.seed + 7919 * i) for i, fam in enumerate(families)]
    if len(sets) == 1:
        data = make_dataset(sets[0], args.views, args.seed, image_size=args.size)
    else:
        data = mixed_category(sets, args.views, args.seed, image_size=args.size)

    def body(out: Outputs):
        for entry, img in zip(data.entries, data.images):
            out.write(entry.path, encode_pgm(img))
        lines = "".join(f"{e.path} {e.shape_id} {e.view}\n" for e in data.entries)
        out.write("manifest.txt", lines.encode("utf-8"))
        if args.voxels:
            recipes = [r for s in sets for r in s]
            staging = Path(args.out) / ".voxels.tmp"
            out.mkdir(staging)
            try:
                write_voxel_set(recipes, staging, args.size)
                for src in sorted(staging.rglob("*.vox")) + [staging / "voxels.txt"]:
                    out.write(src.relative_to(staging), src.read_bytes())
            finally:
                shutil.rmtree(staging, ignore_errors=True)

    _run_with_outputs(args.out, body)
    print(f"wrote {len(data.entries)} images to {args.out}")


def _train_config(args) -> TrainConfig:
    overrides = {}
    for flag, field in [
        ("model", "model"), ("epochs", "epochs"), ("batch_size", "batch_size"), ("seed", "seed"),
        ("lr_d", "lr_discriminator"), ("lr_g", "lr_generator"), ("gen_channels", "gen_channels"),
        ("disc_channels", "disc_channels"), ("max_steps", "max_steps"),
    ]:
        value = getattr(args, flag)
        if value is not None:
            overrides[field] = value
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    return TrainConfig.from_text(text, **overrides)


def cmd_train(args):
    cfg = _train_config(args)
    data_dir = Path(args.data)
    if cfg.model == "gan3d":
        if not (data_dir / "voxels.txt").exists():
            raise CliError(f"gan3d trains on voxel grids, but {data_dir} holds no voxels.txt "
                           "(an image dataset); regenerate it with gen-data --voxels")
        data = load_voxel_set(data_dir)
    else:
        if not (data_dir / "manifest.txt").exists():
            raise CliError(f"{data_dir}: missing manifest.txt")
        data = load_images(data_dir)
    result = train(data, cfg, args.out, resume=args.resume)
    last = result.log[-1] if result.log else None
    print(f"trained {result.trainer.step_count} steps; last: {last.line() if last else 'none'}")


def _load_generator(path):
    tensors = ad.load_checkpoint(path)
    for prefix in ("gen", "gen2d"):
        if f"{prefix}/fc/W" in tensors:
            return generator_from_state(tensors, prefix)
    raise CliError(f"{path}: checkpoint holds no generator")


def cmd_sample(args):
    gen = _load_generator(args.checkpoint)
    if gen.nsp != 3:
        raise CliError("sample needs a voxel generator (prgan or gan3d checkpoint)")
    gen.eval()
    codes = sample_codes(np.random.default_rng(args.seed), args.count)

    def body(out: Outputs):
        lines = []
        for start in range(0, args.count, 64):
            batch = codes[start:start + 64]
            if args.images:
                imgs = prgan_images(gen, batch, update_stats=False).value
                for i, img in enumerate(imgs):
                    rel = f"sample_{start + i:05d}.pgm"
                    out.write(rel, encode_pgm(img))
                    lines.append(f"{rel} {start + i} {int(view_bin(batch[i, -1]))}\n")
            else:
                vox = gen.forward(batch, update_stats=False).value
                for i, grid in enumerate(vox):
                    out.write(f"sample_{start + i:05d}.vox", encode_voxels(grid[0]))
        if args.images:
            out.write("manifest.txt", "".join(lines).encode("utf-8"))
        out.write("codes.txt", _codes_text(codes).encode("utf-8"))

    _run_with_outputs(args.out, body)
    print(f"wrote {args.count} samples to {args.out}")


def _codes_text(codes) -> str:
    return "".join(" ".join(f"{v:.9g}" for v in row) + "\n" for row in np.asarray(codes))


def cmd_project(args):
    grid = read_voxels(args.voxels)
    stem = Path(args.voxels).stem

    def body(out: Outputs):
        for v in args.view:
            img = project_view(grid, CANONICAL_VIEWS[v]).value
            out.write(f"{stem}_v{v}.pgm", encode_pgm(img))

    _run_with_outputs(args.out, body)


def contact_sheet(grid) -> np.ndarray:
    """Three soft projections side by side, separated by one mid-grey column."""
    d = grid.shape[0]
    tiles = [project_view(grid, CANONICAL_VIEWS[v]).value for v in CONTACT_VIEWS]
    gap = np.full((d, 1), 0.5, np.float32)
    return np.concatenate([tiles[0], gap, tiles[1], gap, tiles[2]], axis=1)


def cmd_render(args):
    sheet = contact_sheet(read_voxels(args.voxels))
    out_path = Path(args.out)
    _run_with_outputs(out_path.parent, lambda out: out.write(out_path.name, encode_pgm(sheet)))


def _read_code(path):
    values = Path(path).read_text(encoding="utf-8").split()
    try:
        return np.array([float(v) for v in values if not v.startswith("view")][:201], np.float32)
    except ValueError as exc:
        raise CliError(f"{path}: malformed code file ({exc})") from None


def cmd_interpolate(args):
    gen = _load_generator(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    pair = sample_codes(rng, 2)
    z_a = _read_code(args.code_a) if args.code_a else pair[0]
    z_b = _read_code(args.code_b) if args.code_b else pair[1]
    frames = interpolate(gen, z_a, z_b, args.steps)

    def body(out: Outputs):
        for i, grid in enumerate(frames):
            out.write(f"frame_{i:03d}.vox", encode_voxels(grid))
        out.write("codes.txt", _codes_text([z_a, z_b]).encode("utf-8"))

    _run_with_outputs(args.out, body)
    print(f"wrote {args.steps} frames to {args.out}")


def _encoder_for(args) -> Encoder:
    path = Path(args.encoder)
    if path.exists():
        enc = Encoder(np.random.default_rng(0))
        enc.load_state_dict(ad.load_checkpoint(path))
        return enc
    if not args.checkpoint:
        raise CliError(f"{path} does not exist; pass --checkpoint to train an encoder from a generator")
    gen = _load_generator(args.checkpoint)
    pairs = synthesize_pairs(gen, args.pairs, args.seed)
    enc = train_encoder(pairs, epochs=args.epochs, lr=args.lr, seed=args.seed).encoder
    _run_with_outputs(path.parent, lambda out: out.write(path.name, ad.encode_checkpoint(enc.state_dict())))
    return enc


def cmd_encode(args):
    img = read_pgm(args.image)
    enc = _encoder_for(args)
    code = encode(enc, img)
    lines = [f"{v:.9g}" for v in code] + [f"view {predicted_view(code)}"]
    print("\n".join(lines))


def _load_samples(path, prefer=None):
    """Samples and their kind; a dataset directory holding both kinds yields ``prefer`` (images by default)."""
    path = Path(path)
    if path.is_file():
        return (read_voxels(path)[None], "voxels") if path.suffix == ".vox" else (read_pgm(path)[None], "images")
    if prefer == "voxels" and (path / "voxels.txt").exists():
        return load_voxel_set(path), "voxels"
    if (path / "manifest.txt").exists():
        return load_images(path), "images"
    if (path / "voxels.txt").exists():
        return load_voxel_set(path), "voxels"
    vox = sorted(path.glob("*.vox"))
    pgm = sorted(path.glob("*.pgm"))
    if vox and pgm:
        raise CliError(f"{path}: mixes .vox and .pgm files")
    if vox:
        return np.stack([read_voxels(p) for p in vox]), "voxels"
    if pgm:
        return np.stack([read_pgm(p) for p in pgm]), "images"
    raise CliError(f"{path}: no samples found")


def cmd_eval_mmd(args):
    a, kind_a = _load_samples(args.a)
    b, kind_b = _load_samples(args.b, prefer=kind_a)
    if kind_a != kind_b or a.shape[1:] != b.shape[1:]:
        raise CliError(f"sample sets differ: {kind_a} {a.shape[1:]} vs {kind_b} {b.shape[1:]}")
    bandwidth = args.bandwidth or (IMAGE_BANDWIDTH if kind_a == "images" else VOXEL_BANDWIDTH)
    cfg = MmdConfig(bandwidth, args.kernel, args.estimator, args.samples, args.threshold)
    value = mmd_between(a, b, cfg, np.random.default_rng(args.seed), args.threshold_b)
    print(format_result(value, min(len(a), cfg.samples), min(len(b), cfg.samples), bandwidth))


# ------------------------------------------------------------------ parser


def _channels(text):
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prgan", description="3D shape GANs learned from 2D silhouettes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a procedural silhouette dataset")
    p.add_argument("--family", default="cuboid-composite", help=f"one of {FAMILIES}, or several comma-separated")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--views", type=int, choices=(1, 2, 4, 8), default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--voxels", action="store_true", help="also write voxel grids for the 3D-GAN baseline")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train PrGAN or a baseline")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr-d", type=float)
    p.add_argument("--lr-g", type=float)
    p.add_argument("--gen-channels", type=_channels)
    p.add_argument("--disc-channels", type=_channels)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw voxel grids (or their silhouettes) from a generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", action="store_true", help="write projected silhouettes instead of grids")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("project", help="soft silhouettes of a voxel file")
    p.add_argument("--voxels", required=True)
    p.add_argument("--view", type=int, action="append", choices=range(8), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("render", help="three-view contact sheet of a voxel file")
    p.add_argument("--voxels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("interpolate", help="voxel grids along a straight line in code space")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--code-a")
    p.add_argument("--code-b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("encode", help="latent code and view of one silhouette")
    p.add_argument("--image", required=True)
    p.add_argument("--encoder", required=True, help="encoder checkpoint; trained and saved here if missing")
    p.add_argument("--checkpoint", help="generator checkpoint used to train a missing encoder")
    p.add_argument("--pairs", type=int, default=50000)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval-mmd", help="MMD between two sample sets")
    p.add_argument("--a", required=True, help="generated samples: directory or single file")
    p.add_argument("--b", required=True, help="reference samples: directory or single file")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--kernel", choices=("gaussian", "laplacian"), default="gaussian")
    p.add_argument("--estimator", choices=("u", "v"), default="u")
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--threshold", type=float, default=PRGAN_THRESHOLD,
                   help=f"binarization threshold for --a ({PRGAN_THRESHOLD} PrGAN, {GAN3D_THRESHOLD} 3D-GAN)")
    p.add_argument("--threshold-b", type=float, help="binarization threshold for --b (default: --threshold)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_mmd)
    return parser


def _limit_threads():
    raw = os.environ.get("PRGAN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"PRGAN_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise CliError(f"PRGAN_THREADS must be >= 0, got {n}")
    if n == 0:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        limiter = _limit_threads()
        try:
            args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (CliError, FormatError, ad.CheckpointError, NonFiniteLossError, ValueError, KeyError, OSError) as exc:
        print(f"prgan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
