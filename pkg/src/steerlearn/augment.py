"""Image and label augmentation for steering frames.

Images are ``(H, W, 3)`` uint8 arrays until :func:`normalize` maps them to
``[-1, 1]``. Every random choice is drawn from a :class:`SeededRng` derived
from ``(master seed, epoch, sample index)``, so a sample's augmentation does
not depend on the order in which samples are processed.

Geometry conventions: pixel centres sit at integer coordinates, ``x`` grows
to the right and ``y`` downwards. Rotation is about ``((W-1)/2, (H-1)/2)``,
positive angles turn the picture counter-clockwise as displayed. Resampling is
bilinear; :func:`resize` uses the half-pixel-centre mapping
``src = (dst + 0.5) * scale - 0.5`` with edge clamping, :func:`rotate` fills
with zeros outside the source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .tensor_core import SeededRng, dtype_for

DEFAULT_ANGLE_PER_PX = 0.004
SOURCE_SHAPE = (480, 640)
SKY_INTERMEDIATE = (160, 320)
SKY_ROWS = 40
CROPPED_SHAPE = (120, 320)
TRANSFER_SHAPE = (224, 224)


@dataclass
class LabeledImage:
    image: np.ndarray
    steering: float


def normalize(image: np.ndarray, precision: str = "single") -> np.ndarray:
    """``v -> -1 + 2 v / 255``."""
    return (-1.0 + 2.0 * image.astype(np.float64) / 255.0).astype(dtype_for(precision))


def _to_output(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    if like.dtype == np.uint8:
        return np.clip(np.rint(values), 0, 255).astype(np.uint8)
    return values.astype(like.dtype)


def flip_horizontal(s: LabeledImage) -> LabeledImage:
    return LabeledImage(s.image[..., :, ::-1, :].copy(), -s.steering)


def _scale_value(image: np.ndarray, factor) -> np.ndarray:
    """Scale the HSV value channel by ``factor`` (scalar or ``(H, W)``), clamped to [0, 1]."""
    hsv = rgb_to_hsv(image.astype(np.float64) / 255.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * factor, 0.0, 1.0)
    return _to_output(hsv_to_rgb(hsv) * 255.0, image)


def brightness(image: np.ndarray, factor: float) -> np.ndarray:
    if not math.isfinite(factor) or factor < 0:
        raise ValueError(f"brightness factor must be finite and non-negative, got {factor}")
    return _scale_value(image, factor)


def shadow_mask(shape, p0, p1, side: int) -> np.ndarray:
    """Pixels strictly on one side of the line through ``p0`` and ``p1`` (``(x, y)`` points).

    ``side=+1`` selects points with positive cross product; for a line drawn
    from top to bottom that is the left-hand part of the image.
    """
    H, W = shape
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    (x0, y0), (x1, y1) = p0, p1
    d = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
    return d > 0 if side > 0 else d < 0


def shadow(image: np.ndarray, seed: int, strength: float = 0.5, line=None, side: int | None = None) -> np.ndarray:
    """Darken everything on one side of a random line joining the top and bottom borders.

    ``line=((x0, y0), (x1, y1))`` and ``side`` override the random draw.
    """
    if not 0 < strength <= 1:
        raise ValueError(f"shadow strength must be in (0, 1], got {strength}")
    H, W = image.shape[-3:-1]
    rng = SeededRng(seed)
    top, bottom, s = rng.uniform(0, W - 1), rng.uniform(0, W - 1), rng.integers(0, 1)
    if line is None:
        line = ((top, 0.0), (bottom, float(H - 1)))
    if side is None:
        side = 1 if s else -1
    if strength == 1:
        return image.copy()
    mask = shadow_mask((H, W), line[0], line[1], side)
    out = image.copy()
    out[..., mask, :] = _scale_value(image[..., mask, :], strength)
    return out


def shift(s: LabeledImage, dx: int, dy: int, angle_per_px: float = DEFAULT_ANGLE_PER_PX) -> LabeledImage:
    """Translate by whole pixels, zero-filling; only the horizontal part moves the label."""
    img = s.image
    H, W = img.shape[-3:-1]
    dx, dy = int(dx), int(dy)
    if abs(dx) >= W or abs(dy) >= H:
        raise ValueError(f"shift ({dx}, {dy}) too large for {H}x{W} image")
    out = np.zeros_like(img)
    ys_out = slice(max(dy, 0), H + min(dy, 0))
    xs_out = slice(max(dx, 0), W + min(dx, 0))
    ys_in = slice(max(-dy, 0), H + min(-dy, 0))
    xs_in = slice(max(-dx, 0), W + min(-dx, 0))
    out[..., ys_out, xs_out, :] = img[..., ys_in, xs_in, :]
    return LabeledImage(out, s.steering + dx * angle_per_px)


def bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill: str = "zero") -> np.ndarray:
    """Sample ``image (H, W, C)`` at float coordinates; returns float64 ``(*ys.shape, C)``.

    ``fill="zero"`` treats everything outside the pixel grid as 0,
    ``fill="edge"`` clamps coordinates to the grid.
    """
    H, W = image.shape[:2]
    src = image.astype(np.float64)
    if fill == "edge":
        ys = np.clip(ys, 0, H - 1)
        xs = np.clip(xs, 0, W - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    out = np.zeros(ys.shape + (image.shape[2],))
    for yy, xx, w in (
        (y0, x0, (1 - wy) * (1 - wx)),
        (y0, x0 + 1, (1 - wy) * wx),
        (y0 + 1, x0, wy * (1 - wx)),
        (y0 + 1, x0 + 1, wy * wx),
    ):
        ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
        vals = src[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
        out += np.where(ok[..., None], w * vals, 0.0)
    return out


def _exact_cos_sin(degrees: float) -> tuple[float, float]:
    if degrees % 90 == 0:
        return {0: (1.0, 0.0), 1: (0.0, 1.0), 2: (-1.0, 0.0), 3: (0.0, -1.0)}[int(degrees // 90) % 4]
    t = math.radians(degrees)
    return math.cos(t), math.sin(t)


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    if image.ndim > 3:
        return np.stack([rotate(f, degrees) for f in image.reshape(-1, *image.shape[-3:])]).reshape(image.shape)
    H, W = image.shape[:2]
    cy, cx = (H - 1) / 2, (W - 1) / 2
    c, s = _exact_cos_sin(degrees)
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    u, v = x - cx, y - cy
    xs = cx + u * c - v * s
    ys = cy + u * s + v * c
    return _to_output(bilinear_sample(image, ys, xs, "zero"), image)


def resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    if image.ndim > 3:
        frames = [resize(f, height, width) for f in image.reshape(-1, *image.shape[-3:])]
        return np.stack(frames).reshape(*image.shape[:-3], height, width, image.shape[-1])
    H, W = image.shape[:2]
    ys = (np.arange(height) + 0.5) * (H / height) - 0.5
    xs = (np.arange(width) + 0.5) * (W / width) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _to_output(bilinear_sample(image, yy, xx, "edge"), image)


def crop_sky(image: np.ndarray) -> np.ndarray:
    """480x640 source -> bilinear downscale to 160x320 -> drop the top 40 rows -> 120x320."""
    if tuple(image.shape[-3:-1]) != SOURCE_SHAPE:
        raise ValueError(f"crop_sky expects {SOURCE_SHAPE[0]}x{SOURCE_SHAPE[1]} frames, got {image.shape}")
    small = resize(image, *SKY_INTERMEDIATE)
    return small[..., SKY_ROWS:, :, :].copy()


# --- pipelines -----------------------------------------------------------

GEOMETRY_OPS = ("crop_sky", "resize")
LEVELS = ("minimal", "moderate", "heavy")


@dataclass(frozen=True)
class OpSpec:
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class PipelineSpec:
    """Ordered augmentation ops plus the seed they draw from.

    Sample ``i`` in epoch ``e`` uses ``SeededRng.derived(seed, e, i)``. When
    ``trace`` is a list, every application appends ``(tag, index, kinds)``.
    """

    ops: list[OpSpec]
    seed: int = 0
    angle_per_px: float = DEFAULT_ANGLE_PER_PX
    level: str = "custom"
    trace: list | None = None

    @property
    def kinds(self) -> list[str]:
        return [op.kind for op in self.ops]

    def eval_view(self) -> "PipelineSpec":
        """Same spec with only the deterministic geometry ops left."""
        return replace(self, ops=[op for op in self.ops if op.kind in GEOMETRY_OPS], level="eval")


def geometry_ops(geometry: str) -> list[OpSpec]:
    if geometry == "crop_sky":
        return [OpSpec("crop_sky")]
    if geometry == "resize224":
        return [OpSpec("resize", {"height": TRANSFER_SHAPE[0], "width": TRANSFER_SHAPE[1]})]
    if geometry == "none":
        return []
    raise ValueError(f"unknown geometry {geometry!r}")


def preset(level: str, seed: int = 0, geometry: str = "crop_sky", angle_per_px: float = DEFAULT_ANGLE_PER_PX) -> PipelineSpec:
    """``minimal``, ``moderate``, ``heavy`` or ``none`` (geometry only)."""
    flip = OpSpec("flip", {"p": 0.5})
    if level == "none":
        ops = []
    elif level == "minimal":
        ops = [flip]
    elif level == "moderate":
        ops = [
            flip,
            OpSpec("rotate", {"max_deg": 5.0}),
            OpSpec("shift", {"max_dx": 25, "max_dy": 25}),
            OpSpec("brightness", {"low": 0.8, "high": 1.2}),
        ]
    elif level == "heavy":
        ops = [
            flip,
            OpSpec("rotate", {"max_deg": 30.0}),
            OpSpec("shadow", {"p": 0.5, "low": 0.4, "high": 0.6}),
            OpSpec("shift", {"max_dx": 50, "max_dy": 50}),
            OpSpec("brightness", {"low": 0.5, "high": 1.5}),
        ]
    else:
        raise ValueError(f"unknown augmentation level {level!r}; expected none or one of {LEVELS}")
    return PipelineSpec(ops + geometry_ops(geometry), seed, angle_per_px, level)


def apply_pipeline(spec: PipelineSpec, image: np.ndarray, steering: float, index: int, epoch: int = 0, tag: str = "train") -> LabeledImage:
    """Run the pipeline on one frame ``(H, W, 3)`` or a stack ``(..., H, W, 3)``.

    Random parameters are drawn once per sample, so every frame of a stacked
    window gets the same flip/shift/rotation.
    """
    rng = SeededRng.derived(spec.seed, epoch, index)
    s = LabeledImage(image, float(steering))
    applied = []
    for op in spec.ops:
        k, p = op.kind, op.params
        H, W = s.image.shape[-3:-1]
        if k == "flip":
            if rng.random() < p["p"]:
                s = flip_horizontal(s)
                applied.append(k)
        elif k == "rotate":
            s = LabeledImage(rotate(s.image, rng.uniform(-p["max_deg"], p["max_deg"])), s.steering)
            applied.append(k)
        elif k == "shift":
            mx, my = min(p["max_dx"], W - 1), min(p["max_dy"], H - 1)
            dx, dy = rng.integers(-mx, mx), rng.integers(-my, my)
            s = shift(s, dx, dy, spec.angle_per_px)
            applied.append(k)
        elif k == "brightness":
            s = LabeledImage(brightness(s.image, rng.uniform(p["low"], p["high"])), s.steering)
            applied.append(k)
        elif k == "shadow":
            fire, strength, sub = rng.random() < p["p"], rng.uniform(p["low"], p["high"]), rng.integers(0, 2**63 - 1)
            if fire:
                frames = s.image.reshape(-1, H, W, s.image.shape[-1])
                out = np.stack([shadow(f, sub, strength) for f in frames]).reshape(s.image.shape)
                s = LabeledImage(out, s.steering)
                applied.append(k)
        elif k == "crop_sky":
            s = LabeledImage(crop_sky(s.image), s.steering)
            applied.append(k)
        elif k == "resize":
            s = LabeledImage(resize(s.image, p["height"], p["width"]), s.steering)
            applied.append(k)
        else:
            raise ValueError(f"unknown op kind {k!r}")
    if spec.trace is not None:
        spec.trace.append((tag, index, tuple(applied)))
    return s
