"""Train the NVIDIA model under the minimal, moderate and heavy augmentation presets.

    python3 scripts/augmentation_levels.py --dataset DATA --epochs 32 --out runs/aug

Prints one validation RMSE per preset. Without ``--dataset`` a small synthetic
set is used, which only exercises the protocol.
"""

import argparse
from pathlib import Path

from _common import dataset_root, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset")
    ap.add_argument("--epochs", type=int, default=32)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/augmentation_levels")
    args = ap.parse_args()
    root = dataset_root(args.dataset)
    print(f"{'preset':<10} {'train':>9} {'val_best':>9} {'val_final':>9}")
    for preset in ("minimal", "moderate", "heavy"):
        out = Path(args.out) / preset
        settings = {"model": "nvidia", "dataset_root": root, "preset": preset, "epochs": args.epochs,
                    "batch_size": args.batch_size, "seed": args.seed, "output_dir": out}
        r = run(settings, out)
        print(f"{preset:<10} {r['train']:9.4f} {r['val_best']:9.4f} {r['val_final']:9.4f}", flush=True)


if __name__ == "__main__":
    main()
