"""Parameter and multiply-accumulate counts for both presets at every scale, plus the ablation grid."""

import argparse

from defian.config import defian_l, defian_s
from defian.model import build_model, count_flops, count_params

ABLATIONS = {
    "w/o all": (False, False, False),
    "DAC": (False, False, True),
    "MSHF": (True, False, False),
    "DiEnDec": (False, True, False),
    "MSHF+DAC": (True, False, True),
    "DiEnDec+DAC": (False, True, True),
    "MSHF+DiEnDec": (True, True, False),
    "full": (True, True, True),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--height", type=int, default=360, help="HR output height")
    ap.add_argument("--width", type=int, default=480, help="HR output width")
    ap.add_argument("--ablation-scale", type=int, default=3)
    args = ap.parse_args()

    print(f"{'model':<10} {'scale':>5} {'params (K)':>12} {'MACs (G)':>10}")
    for name, preset in (("DeFiAN_S", defian_s), ("DeFiAN_L", defian_l)):
        for s in (2, 3, 4):
            m = build_model(preset(s))
            print(f"{name:<10} {s:>5} {count_params(m) / 1e3:>12.1f} {count_flops(m, (args.height, args.width)) / 1e9:>10.2f}")

    print(f"\nablation, DeFiAN_L x{args.ablation_scale}")
    counts = {}
    for label, (m, d, a) in ABLATIONS.items():
        cfg = defian_l(args.ablation_scale, use_mshf=m, use_diendec=d, use_dac=a)
        counts[label] = count_params(build_model(cfg)) / 1e3
    for label, k in sorted(counts.items(), key=lambda kv: kv[1]):
        print(f"  {label:<14} {k:>10.1f}K")
    order = list(counts.values())
    print("listed order strictly increasing:", all(x < y for x, y in zip(order, order[1:])))


if __name__ == "__main__":
    main()
