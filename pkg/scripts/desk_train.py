"""Train the micro network on generated images and report the smoothed-loss reduction.

Defaults reproduce the desk-scale check: N=1, M=1, C=8, x2, four 128px images,
batch 16, 48px LR patches, 300 updates, one BLAS thread.
"""

import argparse
import time

from threadpoolctl import threadpool_limits

from defian.config import ModelConfig, TrainConfig
from defian.data import ImageFolder, synthetic_images
from defian.model import build_model
from defian.train import smoothed, train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--updates", type=int, default=300)
    ap.add_argument("--patch", type=int, default=48)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--lr0", type=float, default=1e-4)
    ap.add_argument("--clip", type=float, default=10.0)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--window", type=int, default=50)
    ap.add_argument("--out", help="directory for loss.csv and checkpoints (first seed only)")
    args = ap.parse_args()

    mcfg = ModelConfig(n_modules=1, n_blocks=1, channels=8, scale=2)
    data = ImageFolder.from_arrays(synthetic_images(4, 128, seed=0), 2)
    print("seed  seconds  start_mae  end_mae  ratio")
    for i, seed in enumerate(args.seeds):
        tcfg = TrainConfig(
            batch_size=args.batch, patch_size=args.patch, lr0=args.lr0,
            total_updates=args.updates, grad_clip=args.clip, seed=seed,
        )
        t0 = time.perf_counter()
        with threadpool_limits(limits=1):
            result = train(build_model(mcfg, seed=seed), data, tcfg, out_dir=args.out if i == 0 else None)
        curve = smoothed([loss for _, _, loss in result.trace], args.window)
        start, end = curve[min(args.window, len(curve)) - 1], curve[-1]
        print(f"{seed:>4}  {time.perf_counter() - t0:7.1f}  {start:9.4f}  {end:7.4f}  {end / start:5.3f}")


if __name__ == "__main__":
    main()
