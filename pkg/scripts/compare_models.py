"""Train NVIDIA, 3D convolutional LSTM and transfer models and compare them with predicting 0.

    python3 scripts/compare_models.py --dataset DATA --epochs 32 --out runs/compare

Extra ``--set key=value`` pairs apply to every model (e.g. ``--set trunk_depth=1``
for a quick transfer run). The held-out set is the validation split. The clip
model is the slowest: one epoch over a hundred windows takes minutes on one core.
"""

import argparse
from pathlib import Path

from _common import dataset_root, run
from steerlearn.cli import split_samples
from steerlearn.config import parse_config
from steerlearn.train_eval import zero_baseline


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset")
    ap.add_argument("--epochs", type=int, default=32)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--preset", default="moderate")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out", default="runs/compare_models")
    args = ap.parse_args()
    root = dataset_root(args.dataset)
    extra = dict(p.split("=", 1) for p in args.set)
    print(f"{'model':<12} {'train':>9} {'val_final':>9}")
    for model in ("nvidia", "conv3d_lstm", "transfer"):
        out = Path(args.out) / model
        settings = {"model": model, "dataset_root": root, "preset": args.preset, "epochs": args.epochs,
                    "batch_size": args.batch_size, "seed": args.seed, "output_dir": out, **extra}
        r = run(settings, out)
        print(f"{model:<12} {r['train']:9.4f} {r['val_final']:9.4f}", flush=True)
    cfg = parse_config(f"dataset_root = {root}\nseed = {args.seed}")
    _, va = split_samples("nvidia", root, cfg)
    print(f"{'predict 0':<12} {'':>9} {zero_baseline(va):9.4f}")


if __name__ == "__main__":
    main()
