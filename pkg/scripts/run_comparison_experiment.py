#!/usr/bin/env python3
"""End-to-end experiment: synthesize a dataset, train both model arms,
and print the side-by-side AP/AR comparison table.

Equivalent to:

    gazedet synth --out DATA --n 200 --size 64 --seed SEED
    gazedet compare --dataset DATA --out OUT --epochs 15 --seed SEED
"""

import argparse
import sys
import time

from gazedet import dataset as ds
from gazedet import trainer as tr
from gazedet.detector import ModelConfig


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/comparison")
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--lr", type=float, default=0.01)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--fusion", choices=("sum", "mul"), default="sum")
    parser.add_argument("--fusion-point", choices=("input", "feature"),
                        default="feature")
    args = parser.parse_args(argv)

    readings = ds.synth_generate(
        ds.SynthConfig(n_readings=args.n, img_size=args.size), args.seed)
    train_r, val_r, test_r = ds.split(readings, (0.8, 0.1, 0.1), args.seed)
    print(f"dataset: {len(train_r)} train / {len(val_r)} val / {len(test_r)} test")

    arms = [
        ("image_only", ModelConfig(img_size=args.size, use_fixations=False,
                                   seed=args.seed)),
        ("multimodal", ModelConfig(img_size=args.size, use_fixations=True,
                                   fusion_mode=args.fusion,
                                   fusion_point=args.fusion_point,
                                   seed=args.seed)),
    ]
    tcfg = tr.TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed)
    t0 = time.perf_counter()
    reports = tr.run_comparison(arms, train_r, val_r, test_r, tcfg, args.out,
                                log=print)
    print(f"\ntrained both arms in {time.perf_counter() - t0:.0f}s\n")
    print(tr.comparison_markdown(reports))
    print(f"artifacts in {args.out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
