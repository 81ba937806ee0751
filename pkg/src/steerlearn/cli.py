"""Command-line entry point.

Exit codes: 0 success, 2 usage/config/data error, 3 runtime failure
(including training divergence).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import augment, saliency
from .config import ConfigError, RunConfig, dump_config, load_config
from .dataset import (
    DatasetError,
    FrameSamples,
    WindowSamples,
    group_by_video,
    load_dataset,
    save_image,
    split,
)
from .models import (
    CheckpointError,
    build_conv3d_lstm,
    build_nvidia,
    build_transfer,
    forward,
    load_model,
)
from .train_eval import DivergenceError, TrainConfig, evaluate, prepare_batch, train, zero_baseline

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

GEOMETRY = {"nvidia": "crop_sky", "conv3d_lstm": "crop_sky", "transfer": "resize224"}


class UsageError(Exception):
    pass


def build_model(cfg: RunConfig):
    if cfg.model == "nvidia":
        return build_nvidia(seed=cfg.seed, precision=cfg.precision)
    if cfg.model == "conv3d_lstm":
        return build_conv3d_lstm(seed=cfg.seed, precision=cfg.precision)
    return build_transfer(
        freeze_layers=cfg.freeze_layers,
        trunk_depth=cfg.trunk_depth_value,
        width=cfg.width,
        seed=cfg.seed,
        precision=cfg.precision,
    )


def make_pipeline(cfg: RunConfig, model_id: str | None = None):
    return augment.preset(cfg.preset, cfg.seed, GEOMETRY[model_id or cfg.model], cfg.angle_per_px)


def split_samples(model_id: str, root, cfg: RunConfig):
    """(train, validation) sample sets for a model, following the config's split policy."""
    index = load_dataset(root, None if cfg.camera == "all" else cfg.camera)
    records = index.records
    if not records:
        raise DatasetError(f"{root}: no usable frames")
    if model_id != "conv3d_lstm":
        tr, va = split(records, cfg.split_ratio, cfg.split_policy, cfg.seed)
        return FrameSamples(tr), FrameSamples(va)
    if cfg.split_policy == "chronological":
        tr, va = split(records, cfg.split_ratio, "chronological")
        return WindowSamples(group_by_video(tr)), WindowSamples(group_by_video(va))
    full = WindowSamples(index.videos)
    n = len(full)
    perm = np.random.Generator(np.random.PCG64(cfg.seed)).permutation(n)
    k = int(math.floor(cfg.split_ratio * n))
    return (
        WindowSamples(index.videos, windows=[full.windows[i] for i in perm[:k]]),
        WindowSamples(index.videos, windows=[full.windows[i] for i in perm[k:]]),
    )


def all_samples(model_id: str, root, cfg: RunConfig):
    index = load_dataset(root, None if cfg.camera == "all" else cfg.camera)
    return WindowSamples(index.videos) if model_id == "conv3d_lstm" else FrameSamples(index.records)


def _overrides(pairs):
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --- commands ------------------------------------------------------------


def cmd_ingest(args) -> int:
    index = load_dataset(args.root, camera=None)
    total = 0
    for video, recs in index.videos.items():
        steer = np.array([r.steering for r in recs]) if recs else np.zeros(0)
        cams = {c: sum(r.camera == c for r in recs) for c in ("left", "center", "right")}
        stats = f"steering mean={steer.mean():.5f} std={steer.std():.5f}" if steer.size else "steering n/a"
        print(f"{video}: frames={len(recs)} cameras={cams} {stats} skipped={len(index.skipped[video])}")
        for s in index.skipped[video]:
            print(f"  skipped row {s.row}: {s.reason}")
        total += len(recs)
    print(f"total frames={total}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args.set))
    train_set, val_set = split_samples(cfg.model, cfg.dataset_root, cfg)
    if len(train_set) == 0:
        raise DatasetError("training split is empty")
    g = build_model(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    tcfg = TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        precision=cfg.precision,
        lr=cfg.lr,
        decay_mode=cfg.decay_mode,
        timing=cfg.timing,
    )

    def report(epoch, hist):
        print(f"epoch {epoch}: train_rmse={hist.train_rmse[-1]:.6f} val_rmse={hist.val_rmse[-1]:.6f}", flush=True)

    try:
        hist = train(g, train_set, tcfg, val_set, make_pipeline(cfg), out, on_epoch=report)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"best epoch {hist.best_epoch}; history written to {out / 'history.csv'}")
    return EXIT_OK


def _eval_config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def cmd_eval(args) -> int:
    cfg = _eval_config(args)
    root = args.dataset or cfg.dataset_root
    if args.baseline and not args.checkpoint:
        model_id, g = cfg.model, None
    else:
        if not args.checkpoint:
            raise UsageError("eval needs a checkpoint unless --baseline is given")
        g, _ = load_model(args.checkpoint)
        model_id = g.model_id
    if args.split == "all":
        samples = all_samples(model_id, root, cfg)
    else:
        tr, va = split_samples(model_id, root, cfg)
        samples = tr if args.split == "train" else va
    if len(samples) == 0:
        raise DatasetError(f"split {args.split!r} is empty")
    if args.baseline:
        print(f"zero_baseline_rmse={zero_baseline(samples):.6f}")
    if g is not None:
        pipe = augment.preset("none", 0, GEOMETRY.get(model_id, "none"))
        print(f"rmse={evaluate(g, samples, pipe):.6f}")
    return EXIT_OK


def cmd_augment_preview(args) -> int:
    cfg = load_config(args.config, _overrides(args.set))
    if args.n < 0:
        raise UsageError("-n must be >= 0")
    if args.n == 0:
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = load_dataset(cfg.dataset_root, None if cfg.camera == "all" else cfg.camera)
    records = index.records[: args.n]
    pipe = make_pipeline(cfg, "nvidia" if cfg.model == "conv3d_lstm" else cfg.model)
    samples = FrameSamples(records)
    rows = []
    for i in range(len(samples)):
        raw, label = samples.get(i)
        before = augment.apply_pipeline(pipe.eval_view(), raw, label, i, 0, tag="preview")
        after = augment.apply_pipeline(pipe, raw, label, i, 0, tag="preview")
        save_image(out / f"{i:04d}_before.png", before.image)
        save_image(out / f"{i:04d}_after.png", after.image)
        rows.append([i, records[i].image_path.name, repr(before.steering), repr(after.steering), repr(after.steering - before.steering)])
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "frame", "steering_before", "steering_after", "delta"])
        w.writerows(rows)
    print(f"wrote {len(rows)} before/after pairs to {out}")
    return EXIT_OK


def cmd_saliency(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint {args.checkpoint} not found")
    g, _ = load_model(args.checkpoint)
    cfg = _eval_config(args)
    root = args.dataset or cfg.dataset_root
    pipe = augment.preset("none", 0, GEOMETRY[g.model_id])
    samples = all_samples(g.model_id, root, cfg)
    if not 0 <= args.index < len(samples):
        raise UsageError(f"--index {args.index} outside [0, {len(samples)})")
    x, y = prepare_batch(samples, [args.index], pipe, 0, train=False, precision=g.precision)
    grad = saliency.input_gradient(g, x[0])
    pred = float(forward(g, x, training=False).value[0])
    frames = saliency.normalized_to_uint8(x[0])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")
    if g.model_id == "conv3d_lstm":
        for j in range(grad.shape[0]):
            for k in range(grad.shape[1]):
                saliency.render(frames[j, k], saliency.to_map(grad[j, k]), f"{stem}_clip{j}_frame{k}.png")
        last = frames[-1, -1]
        saliency.render(last, saliency.collapse_sequence(grad), out)
    else:
        last = frames
        saliency.render(frames, saliency.to_map(grad), out)
    saliency.render_angle(last, float(y[0]), pred, f"{stem}_angle.png")
    print(f"true={float(y[0]):.6f} predicted={pred:.6f} -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import write_dataset

    write_dataset(args.root, args.videos, args.frames, (args.height, args.width), args.seed)
    print(f"wrote {args.videos} synthetic videos to {args.root}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="steerlearn", description="Steering-angle models: train, evaluate, inspect.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a dataset root and summarize it")
    s.add_argument("root")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("train", help="train a model from a run config")
    s.add_argument("config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="RMSE of a checkpoint (and/or the predict-zero baseline)")
    s.add_argument("checkpoint", nargs="?")
    s.add_argument("--dataset")
    s.add_argument("--config")
    s.add_argument("--split", choices=["train", "validation", "all"], default="validation")
    s.add_argument("--baseline", action="store_true", help="also print the predict-zero RMSE")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("augment", help="augmentation tools")
    asub = s.add_subparsers(dest="augment_command", required=True)
    a = asub.add_parser("preview", help="write before/after PNG pairs")
    a.add_argument("config")
    a.add_argument("-n", type=int, default=8)
    a.add_argument("--out", required=True)
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    a.set_defaults(fn=cmd_augment_preview)

    s = sub.add_parser("saliency", help="saliency overlay for one frame or window")
    s.add_argument("checkpoint")
    s.add_argument("--dataset")
    s.add_argument("--config")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_saliency)

    s = sub.add_parser("synth", help="write a small synthetic dataset")
    s.add_argument("root")
    s.add_argument("--videos", type=int, default=2)
    s.add_argument("--frames", type=int, default=12)
    s.add_argument("--height", type=int, default=480)
    s.add_argument("--width", type=int, default=640)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, DatasetError, UsageError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
