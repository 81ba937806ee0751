"""RMSE of always predicting 0 on each split of a dataset.

    python3 scripts/zero_baseline.py DATA [--split-policy seeded-random]

On the full driving dataset this gives the "predict 0" reference row for the
model comparison.
"""

import argparse

from steerlearn.cli import all_samples, split_samples
from steerlearn.config import parse_config
from steerlearn.train_eval import zero_baseline


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dataset")
    ap.add_argument("--split-policy", default="chronological", choices=["chronological", "seeded-random"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = parse_config(f"dataset_root = {args.dataset}\nsplit_policy = {args.split_policy}\nseed = {args.seed}")
    tr, va = split_samples("nvidia", args.dataset, cfg)
    for name, s in (("train", tr), ("validation", va), ("all", all_samples("nvidia", args.dataset, cfg))):
        print(f"{name:<11} n={len(s):<7} zero_baseline_rmse={zero_baseline(s):.4f}")


if __name__ == "__main__":
    main()
