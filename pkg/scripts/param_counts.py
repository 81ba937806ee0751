"""Trainable parameter count and layer count of each full-size model.

    python3 scripts/param_counts.py
"""

from steerlearn.models import build_conv3d_lstm, build_nvidia, build_transfer, param_count


def main() -> None:
    print(f"{'model':<12} {'layers':>6} {'params':>12} {'with BN stats':>14} {'trainable':>12}")
    for name, build in (("nvidia", build_nvidia), ("conv3d_lstm", build_conv3d_lstm), ("transfer", build_transfer)):
        g = build()
        trainable = sum(g.params[k].size for k in g.trainable_names())
        print(f"{name:<12} {len(g.layers):>6} {param_count(g):>12,} {param_count(g, include_buffers=True):>14,} {trainable:>12,}")


if __name__ == "__main__":
    main()
