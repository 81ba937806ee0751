"""Small synthetic datasets for smoke runs and tests."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dataset import ArraySamples, save_image
from .models.graph import GraphBuilder, ModelGraph
from .tensor_core import SeededRng


def linear_ramp_samples(n: int = 16, shape=(16, 16, 3), seed: int = 0, precision: str = "single") -> ArraySamples:
    """Float images whose left-to-right ramp slope equals the label, plus a little noise.

    Labels are evenly spaced in ``[-0.3, 0.3]``.
    """
    rng = SeededRng(seed)
    H, W, C = shape
    labels = np.linspace(-0.3, 0.3, n)
    ramp = np.linspace(-1.0, 1.0, W)[None, :, None]
    imgs = [np.broadcast_to(y * ramp, shape) + rng.normal(shape, std=0.05) for y in labels]
    dt = np.float32 if precision == "single" else np.float64
    return ArraySamples(np.stack(imgs).astype(dt), labels)


def tiny_conv_model(input_shape=(16, 16, 3), seed: int = 0, precision: str = "single") -> ModelGraph:
    """A two-layer conv net used by smoke tests."""
    b = GraphBuilder("tiny", input_shape, seed, precision)
    b.conv("conv1", 4, (3, 3), stride=2, padding=1, activation="relu")
    b.flatten("flatten")
    b.dense("fc1", 16, activation="relu")
    b.dense("fc_out", 1)
    b.squeeze()
    return b.finish(builder="tiny")


def road_frame(steering: float, shape=(480, 640), seed: int = 0) -> np.ndarray:
    """A crude road picture: grey sky band, dark road, and a lane line whose slant follows ``steering``."""
    H, W = shape
    rng = np.random.default_rng(seed)
    img = np.zeros((H, W, 3), np.uint8)
    img[: H // 3] = (150, 180, 220)
    img[H // 3 :] = (60, 60, 60)
    ys = np.arange(H // 3, H)
    t = (ys - H // 3) / max(H - H // 3 - 1, 1)
    xs = (W / 2 + steering * W * 2 * (1 - t) + 0.2 * W * (t - 0.5)).astype(int)
    for dx in range(-max(W // 80, 1), max(W // 80, 1) + 1):
        img[ys, np.clip(xs + dx, 0, W - 1)] = (240, 240, 80)
    noise = rng.integers(0, 12, size=img.shape, dtype=np.uint8)
    return np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)


def write_dataset(root, videos: int = 2, frames: int = 8, shape=(480, 640), seed: int = 0) -> Path:
    """Write a dataset in the on-disk layout (``<root>/<video>/index.csv`` + PNG frames)."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for v in range(videos):
        vdir = root / f"video{v:02d}"
        vdir.mkdir(parents=True, exist_ok=True)
        steer = np.cumsum(rng.normal(0, 0.02, frames)).clip(-0.3, 0.3)
        with open(vdir / "index.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "frame", "camera", "steering", "torque", "speed"])
            for k in range(frames):
                name = f"frame{k:05d}.png"
                save_image(vdir / name, road_frame(float(steer[k]), shape, seed * 1000 + v * 100 + k))
                w.writerow([1_000_000 * k, name, "center", f"{steer[k]:.6f}", "0.0", "20.0"])
    return root
