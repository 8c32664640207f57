"""Command-line entry point: ``defian {filter,bench-eig,train,eval,sr,count}``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
``DEFIAN_THREADS`` caps the BLAS thread pool used by the convolution kernels.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import struct
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .autograd import default_dtype
from .checkpoint import CheckpointError, load_checkpoint, model_from_checkpoint
from .config import PRESETS, ConfigError, DataConfig, RunConfig, load_config
from .data import ImageFolder, read_png, synthetic_images, to_image, to_tensor, write_png
from .hessian import FIG8_SIZES, SUPPORTED_SCALES, bench_csv, bench_eigen, mshf
from .metrics import psnr, ssim
from .model import build_model, count_flops, count_params
from .train import TrainingDiverged, train

LMAP_MAGIC = b"LMAP"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# raw eigenvalue-map dumps: b"LMAP", u32 ndim, ndim x u32 dims, float32 data, little-endian


def write_lmap(path: str | Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = LMAP_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def read_lmap(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != LMAP_MAGIC:
        raise ValueError(f"{path}: not an LMAP file")
    (ndim,) = struct.unpack_from("<I", data, 4)
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    offset = 8 + 4 * ndim
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    if len(data) - offset != expected:
        raise ValueError(f"{path}: expected {expected} data bytes after byte {offset}, found {len(data) - offset}")
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(dims).copy()


def normalize_map(lam: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a flat map becomes black."""
    lo, hi = float(lam.min()), float(lam.max())
    if hi - lo <= 0:
        return np.zeros(lam.shape, dtype=np.uint8)
    return np.round((lam - lo) / (hi - lo) * 255).astype(np.uint8)


def _scales(text: str) -> tuple[int, ...]:
    try:
        scales = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    bad = [k for k in scales if k not in SUPPORTED_SCALES]
    if bad or not scales:
        supported = ", ".join(map(str, SUPPORTED_SCALES))
        raise argparse.ArgumentTypeError(f"unsupported scale(s) {bad or text!r}; supported scales are {supported}")
    return scales


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 8x8, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# subcommands --------------------------------------------------------------------------


def cmd_filter(args) -> int:
    img = read_png(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with default_dtype(np.float64):
        maps = mshf(to_tensor(img), args.scales).value[0]
    for k, lam in zip(args.scales, maps):
        write_png(out / f"lambda_{k}.png", normalize_map(lam))
        write_lmap(out / f"lambda_{k}.lmap", lam)
        print(out / f"lambda_{k}.png")
    return 0


def cmd_bench_eig(args) -> int:
    if args.sizes is None and args.channels is None:
        sizes = FIG8_SIZES
    else:
        spatial = args.sizes or [(1, 1), (2, 2), (4, 4), (8, 8)]
        sizes = [(c, h, w) for c in (args.channels or [1, 4, 16, 64]) for h, w in spatial]
    text = bench_csv(bench_eigen(sizes, reps=args.reps, ker=args.ker, seed=args.seed))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "data", None):
        cfg = RunConfig(cfg.model, cfg.train, DataConfig(args.data, cfg.data.lr_dir, cfg.data.prefetch))
    return cfg


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.synthetic:
        dataset = ImageFolder.from_arrays(synthetic_images(args.synthetic, 128, cfg.train.seed), cfg.model.scale)
    elif cfg.data.hr_dir:
        dataset = ImageFolder(cfg.data.hr_dir, cfg.model.scale, cfg.data.lr_dir)
    else:
        raise UsageError("no training data: give --data DIR, set data.hr_dir, or use --synthetic N")
    model = build_model(cfg.model, seed=cfg.train.seed)
    resume = load_checkpoint(args.resume, expect_config=cfg.model) if args.resume else None
    result = train(model, dataset, cfg.train, out_dir=args.out, resume=resume, prefetch=cfg.data.prefetch, log_every=args.log_every)
    if result.trace:
        print(f"finished {len(result.trace)} updates, last loss {result.trace[-1][2]:.5f}")
    return 0


def _super_resolve(model, lr_img: np.ndarray) -> np.ndarray:
    return to_image(model(to_tensor(lr_img)))


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    s = ckpt.config.scale
    data = ImageFolder(args.hr, s, args.lr)
    crop = 0 if args.no_crop else s
    rows = []
    for i, name in enumerate(data.names):
        lr_img, hr_img = data.pair(i)
        sr = _super_resolve(model, lr_img)
        rows.append((name, psnr(sr, hr_img, crop=crop), ssim(sr, hr_img, crop=crop)))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["image", "psnr", "ssim"])
        for name, p, q in rows:
            writer.writerow([name, f"{p:.4f}", f"{q:.6f}"])
        writer.writerow(["mean", f"{np.mean([r[1] for r in rows]):.4f}", f"{np.mean([r[2] for r in rows]):.6f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_sr(args) -> int:
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    write_png(args.out, _super_resolve(model, read_png(args.input)))
    print(args.out)
    return 0


def cmd_count(args) -> int:
    if args.config:
        mcfg = load_config(args.config).model
        if args.scale is not None and args.scale != mcfg.scale:
            mcfg = dataclasses.replace(mcfg, scale=args.scale)
    else:
        overrides = {f"use_{name}": False for name in args.disable}
        mcfg = PRESETS[args.preset](args.scale or 2, **overrides)
    model = build_model(mcfg)
    params = count_params(model)
    flops = count_flops(model, (args.height, args.width))
    print(f"params {params} ({params / 1e3:.1f}K)")
    print(f"flops {flops} ({flops / 1e9:.1f}G) for a {args.width}x{args.height} output")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="defian", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("filter", help="write multi-scale Hessian eigenvalue maps of a PNG")
    f.add_argument("input")
    f.add_argument("--scales", type=_scales, default=SUPPORTED_SCALES, help="comma-separated, from 3,5,7")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_filter)

    b = sub.add_parser("bench-eig", help="time closed-form vs eigen-solver filtering, CSV output")
    b.add_argument("--sizes", type=lambda t: [_size(v) for v in t.split(",")], help="e.g. 1x1,2x2,4x4,8x8")
    b.add_argument("--channels", type=_int_list, help="e.g. 1,4,16,64")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--ker", type=int, choices=SUPPORTED_SCALES, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_eig)

    t = sub.add_parser("train", help="train a model; writes loss.csv and .dfan checkpoints")
    t.add_argument("--config")
    t.add_argument("--data", help="directory of HR PNGs (overrides data.hr_dir)")
    t.add_argument("--synthetic", type=int, default=0, metavar="N", help="train on N generated images instead")
    t.add_argument("--out", required=True)
    t.add_argument("--resume")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-image and mean PSNR/SSIM as CSV")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--hr", required=True)
    e.add_argument("--lr", help="LR PNG directory; defaults to LR_x<s> beside --hr or bicubic synthesis")
    e.add_argument("--out")
    e.add_argument("--no-crop", action="store_true", help="score the full image instead of cropping s border pixels")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sr", help="upscale one PNG")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sr)

    c = sub.add_parser("count", help="parameter and multiply-accumulate counts")
    src = c.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS), default="defian_l")
    src.add_argument("--config")
    c.add_argument("--scale", type=int, choices=(2, 3, 4))
    c.add_argument("--disable", type=lambda t: [v for v in t.split(",") if v], default=[], help="subset of mshf,diendec,dac")
    c.add_argument("--height", type=int, default=360)
    c.add_argument("--width", type=int, default=480)
    c.set_defaults(func=cmd_count)
    return p


def _threads() -> int | None:
    raw = os.environ.get("DEFIAN_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"DEFIAN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"DEFIAN_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "count":
        bad = [v for v in args.disable if v not in ("mshf", "diendec", "dac")]
        if bad:
            parser.error(f"--disable accepts mshf, diendec, dac; got {bad}")
    try:
        threads = _threads()
        with threadpool_limits(limits=threads):
            return args.func(args)
    except UsageError as exc:
        print(f"defian: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ConfigError, CheckpointError, TrainingDiverged) as exc:
        print(f"defian {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
