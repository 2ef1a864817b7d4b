"""Command-line entry point: ``bmapdiff {bmaps,forward,train,sample,eval,verify}``.

Every command that writes files also writes ``manifest.txt`` into its
output directory. The manifest holds the fully resolved config, so
``--config <manifest>`` replays the run.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .core import RngStream, to_unit
from .denoiser import train
from .diffusion import ancestral_sample, forward_closed
from .io import (
    FormatError,
    load_image,
    read_checkpoint,
    write_checkpoint,
    write_key_values,
    write_pgm,
    write_tensor,
)
from .metrics import feature_embed, frechet_distance, psnr, ssim
from .phantom import phantom_dataset, phantom_generate
from .verify import run_checks

STREAM_FORWARD = 10
STREAM_SAMPLE = 11
STREAM_INPUT = 12

IMAGE_SUFFIXES = (".pgm", ".usdf")


class CommandError(Exception):
    pass


class Run:
    """Output directory plus the list of files written into it."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise CommandError(f"cannot create output directory {self.out}: {e}") from None
        self.files: list[tuple[str, str]] = []

    def _record(self, name, shape):
        self.files.append((name, "x".join(str(int(s)) for s in shape)))

    def pgm(self, name, values, lo=-1.0, hi=1.0):
        write_pgm(self.out / name, values, lo, hi)
        self._record(name, np.shape(values))

    def tensor(self, name, values):
        write_tensor(self.out / name, values)
        self._record(name, np.shape(values))

    def text(self, name, lines):
        (self.out / name).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        self._record(name, (len(lines),))

    def finish(self):
        items = [("command", self.command), ("version", __version__)]
        items += list(self.cfg.items())
        items += [(f"file.{name}", dims) for name, dims in self.files]
        write_key_values(self.out / "manifest.txt", items, "bmapdiff run manifest")


def log_spaced_steps(T: int, count: int) -> list[int]:
    return sorted({int(v) for v in np.rint(np.geomspace(1, T, count))})


def contact_sheet(images, gap: int = 2, fill: float = -1.0) -> np.ndarray:
    h = images[0].shape[0]
    pad = np.full((h, gap), fill)
    parts = []
    for i, im in enumerate(images):
        if i:
            parts.append(pad)
        parts.append(im)
    return np.concatenate(parts, axis=1)


def cmd_bmaps(cfg: RunConfig) -> int:
    """B_t and B_bar_t at the requested steps as PGM previews and exact tensors.

    B_t previews map ``[1 - eps_b, 1]`` to 0..255; B_bar_t previews map
    ``[min B_bar_T, 1]``, the full range reached by the stack.
    """
    _, stack = cfg.build_schedule()
    if cfg.timesteps:
        steps = [int(s) for s in cfg.timesteps.split(",") if s.strip()]
    else:
        steps = sorted({round(cfg.T * f) for f in (0, 0.25, 0.5, 0.75, 1.0)})
    for t in steps:
        stack.check_t(t, 0)
    floor_bar = float(stack.B_bar[-1].min())
    run = Run("bmaps", cfg)
    for t in steps:
        run.pgm(f"bmap_t{t:04d}.pgm", stack.B[t], 1.0 - cfg.eps_b, 1.0)
        run.tensor(f"bmap_t{t:04d}.usdf", stack.B[t])
        run.pgm(f"bmapbar_t{t:04d}.pgm", stack.B_bar[t], floor_bar, 1.0)
        run.tensor(f"bmapbar_t{t:04d}.usdf", stack.B_bar[t])
    run.finish()
    print(f"wrote {len(run.files)} files to {run.out}")
    return 0


def _input_image(cfg: RunConfig) -> np.ndarray:
    if cfg.input:
        try:
            return load_image(cfg.input)
        except (OSError, FormatError) as e:
            raise CommandError(f"cannot read input image: {e}") from None
    return phantom_generate(cfg.phantom_spec(), RngStream(cfg.seed, [STREAM_INPUT]))


def cmd_forward(cfg: RunConfig) -> int:
    x0 = _input_image(cfg)
    cfg = dataclasses.replace(cfg, height=x0.shape[0], width=x0.shape[1])
    sched, stack = cfg.build_schedule()
    steps = log_spaced_steps(cfg.T, cfg.forward_steps)
    run = Run("forward", cfg)
    run.tensor("input.usdf", x0)
    frames = [x0]
    for t in steps:
        xt = forward_closed(x0, t, sched, stack, RngStream(cfg.seed, [STREAM_FORWARD, t])).x_t
        run.tensor(f"forward_t{t:04d}.usdf", xt)
        frames.append(xt)
    run.pgm("forward_sheet.pgm", contact_sheet(frames))
    run.finish()
    print("steps: " + " ".join(str(t) for t in steps))
    return 0


def load_image_dir(directory) -> dict[str, np.ndarray]:
    d = Path(directory)
    if not d.is_dir():
        raise CommandError(f"{d} is not a directory")
    images = {}
    for p in sorted(d.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES and p.stem not in images:
            images[p.stem] = load_image(p)
    return images


def cmd_train(cfg: RunConfig) -> int:
    if cfg.dataset:
        data = list(load_image_dir(cfg.dataset).values())
        if not data:
            raise CommandError(f"no images found in {cfg.dataset}")
        cfg = dataclasses.replace(cfg, height=data[0].shape[0], width=data[0].shape[1])
    else:
        data = phantom_dataset(cfg.n_phantoms, cfg.phantom_spec(), cfg.seed)
    params, losses = train(cfg.train_config(), data)
    run = Run("train", cfg)
    write_checkpoint(run.out / "checkpoint", params)
    for name, tensor in params.tensors.items():
        run._record(f"checkpoint/{name}.usdf", tensor.shape)
    run.text("loss.csv", ["iter,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(losses)])
    run.finish()
    if losses:
        print(f"iterations={len(losses)} first_loss={losses[0]:.6f} last_loss={losses[-1]:.6f}")
    return 0


def cmd_sample(cfg: RunConfig) -> int:
    if cfg.n_samples == 0:
        return 0
    if not cfg.checkpoint:
        raise CommandError("sample needs --checkpoint")
    try:
        params = read_checkpoint(cfg.checkpoint)
    except (OSError, FormatError, KeyError) as e:
        raise CommandError(f"cannot read checkpoint: {e}") from None
    if (params.height, params.width, params.T) != (cfg.height, cfg.width, cfg.T):
        raise CommandError(
            f"checkpoint is {params.height}x{params.width} with T={params.T}, "
            f"config asks for {cfg.height}x{cfg.width} with T={cfg.T}"
        )
    sched, stack = cfg.build_schedule()
    snap_steps = set(log_spaced_steps(cfg.T, cfg.snapshots)) if cfg.snapshots else set()
    snaps = {}

    def keep(t, x):
        if t in snap_steps:
            snaps[t] = x.copy()

    shape = (cfg.n_samples, cfg.height, cfg.width)
    x = ancestral_sample(params, sched, stack, RngStream(cfg.seed, [STREAM_SAMPLE]), shape, callback=keep)
    run = Run("sample", cfg)
    for i in range(cfg.n_samples):
        run.pgm(f"sample_{i:03d}.pgm", x[i])
        run.tensor(f"sample_{i:03d}.usdf", x[i])
    if snaps:
        (run.out / "snapshots").mkdir(exist_ok=True)
        order = sorted(snaps, reverse=True)
        for t in order:
            run.tensor(f"snapshots/t{t:04d}.usdf", snaps[t])
        for i in range(cfg.n_samples):
            frames = [np.clip(snaps[t][i], -1.0, 1.0) for t in order] + [x[i]]
            run.pgm(f"snapshots/trajectory_{i:03d}.pgm", contact_sheet(frames))
    run.finish()
    print(f"wrote {cfg.n_samples} samples to {run.out}")
    return 0


def _summary(values):
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std()), "range": float(v.max() - v.min())}


def evaluate_dirs(dir_a, dir_b, cfg: RunConfig) -> dict:
    """PSNR/SSIM over filename-paired images plus Fréchet distance over both sets.

    Paired statistics are mean, population standard deviation and range
    (max - min). A missing overlap is reported under ``paired.error``
    rather than aborting the Fréchet computation.
    """
    a = load_image_dir(dir_a)
    b = load_image_dir(dir_b)
    if not a or not b:
        raise CommandError("both directories must contain images")
    report = {"n_a": len(a), "n_b": len(b)}
    common = sorted(set(a) & set(b))
    report["n_pairs"] = len(common)
    if common:
        p = [psnr(to_unit(a[k]), to_unit(b[k])) for k in common]
        s = [ssim(to_unit(a[k]), to_unit(b[k])) for k in common]
        for name, vals in (("psnr", p), ("ssim", s)):
            for stat, v in _summary(vals).items():
                report[f"{name}.{stat}"] = v
    else:
        report["paired.error"] = "no overlapping filenames"
    try:
        fa = feature_embed(list(a.values()), cfg.embedder, cfg.features_a or None)
        fb = feature_embed(list(b.values()), cfg.embedder, cfg.features_b or None)
        report[f"frechet.{cfg.embedder}"] = frechet_distance(fa, fb)
    except (ValueError, OSError) as e:
        report["frechet.error"] = str(e)
    return report


def cmd_eval(cfg: RunConfig, dir_a, dir_b) -> int:
    report = evaluate_dirs(dir_a, dir_b, cfg)
    run = Run("eval", cfg)
    lines = [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in report.items()]
    run.text("eval.txt", lines)
    run.finish()
    print("\n".join(lines))
    return 1 if "paired.error" in report or "frechet.error" in report else 0


def cmd_verify(cfg: RunConfig, corrupt_posterior: bool = False) -> int:
    checks = run_checks(cfg, corrupt_posterior=corrupt_posterior)
    run = Run("verify", cfg)
    lines = [c.line() for c in checks]
    run.text("verify.txt", lines)
    run.finish()
    print("\n".join(lines))
    return 0 if all(c.passed for c in checks) else 1


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise CommandError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file or a run manifest")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")

    parser = argparse.ArgumentParser(prog="bmapdiff", description="Depth-scheduled diffusion for ultrasound-like images.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("bmaps", parents=[common], help="export B-maps at selected steps")
    p = sub.add_parser("forward", parents=[common], help="noise an image at log-spaced steps")
    p.add_argument("input", nargs="?", help="PGM or USDF image (default: a generated phantom)")
    sub.add_parser("train", parents=[common], help="train the denoiser")
    p = sub.add_parser("sample", parents=[common], help="draw ancestral samples")
    p.add_argument("--checkpoint", help="checkpoint directory written by train")
    p = sub.add_parser("eval", parents=[common], help="compare two image directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--embedder", choices=("pixel-stat", "external-file"))
    p.add_argument("--features-a")
    p.add_argument("--features-b")
    p = sub.add_parser("verify", parents=[common], help="run the oracle checks")
    p.add_argument("--corrupt-mu", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = _parse_set(args.set)
        for key, attr in (("seed", "seed"), ("out", "out"), ("input", "input"), ("checkpoint", "checkpoint"),
                          ("embedder", "embedder"), ("features_a", "features_a"), ("features_b", "features_b")):
            value = getattr(args, attr, None)
            if value is not None:
                overrides[key] = str(value)
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "bmaps":
            return cmd_bmaps(cfg)
        if args.command == "forward":
            return cmd_forward(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sample":
            return cmd_sample(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.dir_a, args.dir_b)
        return cmd_verify(cfg, corrupt_posterior=args.corrupt_mu)
    except (CommandError, ValueError, OSError, IndexError) as e:
        print(f"bmapdiff {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
