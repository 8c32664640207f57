"""Closed-form vs per-pixel eigen-solver timing over the 4x4 grid of sizes; CSV to stdout or --out."""

import argparse
from pathlib import Path

from threadpoolctl import threadpool_limits

from defian.hessian import FIG8_SIZES, bench_csv, bench_eigen


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--ker", type=int, default=3, choices=(3, 5, 7))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args()
    with threadpool_limits(limits=args.threads):
        rows = bench_eigen(FIG8_SIZES, reps=args.reps, ker=args.ker)
    text = bench_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    fast = {r["size"]: r["mean_ms"] for r in rows if r["method"] == "closed_form"}
    slow = {r["size"]: r["mean_ms"] for r in rows if r["method"] == "eig_solver"}
    print("\nspeedup (solver / closed form):")
    for size in fast:
        print(f"  {size:>8}  {slow[size] / fast[size]:8.1f}x")


if __name__ == "__main__":
    main()
