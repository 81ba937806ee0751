"""Vanilla input-gradient saliency and the overlay renderers.

A saliency map is the per-pixel maximum over channels of ``|d output / d pixel|``
divided by its global maximum, so values lie in ``[0, 1]`` and an all-zero
gradient stays all zero. A 5x5 window is collapsed by taking the elementwise
maximum of the 25 un-normalized frame maps and normalizing once.

The steering dial used by :func:`render_angle` sits at the bottom centre of
the image with radius ``0.4 * min(H, W)``; a steering value ``s`` is drawn at
angle ``clamp(s * k_display, -pi/2, pi/2)`` from vertical, positive to the
right.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageDraw

from . import autodiff as ad
from .models import ModelGraph, forward

K_DISPLAY = 5.0
HEAT_COLOR = np.array([255.0, 64.0, 0.0])
TRUE_COLOR = (0, 200, 0)
PRED_COLOR = (230, 0, 0)


def input_gradient(g: ModelGraph, x: np.ndarray) -> np.ndarray:
    """Gradient of the model output with respect to the input pixels, in inference mode.

    ``x`` is one sample (``g.input_shape``) or a batch; for a batch the
    gradient of the summed outputs is returned, which is each sample's own
    gradient because inference-mode samples do not interact.
    """
    x = np.asarray(x)
    single = tuple(x.shape) == tuple(g.input_shape)
    xb = x[None] if single else x
    inp = ad.leaf(xb.astype(np.float64 if g.precision == "double" else np.float32))
    out = forward(g, inp, training=False)
    grads = ad.backward(ad.sum(out), wrt=[inp])[inp.id]
    return grads[0] if single else grads


def raw_map(grad: np.ndarray) -> np.ndarray:
    """``max_c |grad|`` for a ``(..., H, W, C)`` gradient."""
    return np.abs(np.asarray(grad, dtype=np.float64)).max(axis=-1)


def _normalized(m: np.ndarray) -> np.ndarray:
    top = m.max() if m.size else 0.0
    return m / top if top > 0 else np.zeros_like(m)


def to_map(grad: np.ndarray) -> np.ndarray:
    return _normalized(raw_map(grad))


def collapse_sequence(grads) -> np.ndarray:
    """Collapse per-frame gradients ``(..., H, W, C)`` (e.g. ``(5, 5, H, W, 3)``) into one map."""
    if isinstance(grads, (list, tuple)):
        shapes = {np.shape(gr) for gr in grads}
        if len(shapes) != 1:
            raise ValueError(f"frame gradients differ in shape: {sorted(shapes)}")
        grads = np.stack(grads)
    m = raw_map(grads)
    return _normalized(m.reshape(-1, *m.shape[-2:]).max(axis=0))


def overlay(image: np.ndarray, smap: np.ndarray, alpha: float = 0.8) -> np.ndarray:
    """Additive heat overlay: ``image + alpha * map * HEAT_COLOR``, clipped to 8 bits."""
    if image.shape[:2] != smap.shape:
        raise ValueError(f"map {smap.shape} does not match image {image.shape[:2]}")
    out = image.astype(np.float64) + alpha * smap[..., None] * HEAT_COLOR
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _save_png(path, arr: np.ndarray) -> None:
    Image.fromarray(arr, "RGB").save(path, format="PNG", compress_level=6, optimize=False)


def render(image: np.ndarray, smap: np.ndarray, path, alpha: float = 0.8) -> np.ndarray:
    out = overlay(image, smap, alpha)
    _save_png(path, out)
    return out


def dial_position(steering: float, shape, k_display: float = K_DISPLAY) -> tuple[float, float]:
    H, W = shape[:2]
    theta = max(-math.pi / 2, min(math.pi / 2, steering * k_display))
    r = 0.4 * min(H, W)
    cx, cy = (W - 1) / 2, H - 1
    return cx + r * math.sin(theta), cy - r * math.cos(theta)


def render_angle(image: np.ndarray, true_s: float, pred_s: float, path, k_display: float = K_DISPLAY) -> np.ndarray:
    """Draw the true (green) and predicted (red) steering markers on the dial."""
    im = Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB")
    draw = ImageDraw.Draw(im)
    rad = max(2, min(im.size) // 30)
    for s, color in ((true_s, TRUE_COLOR), (pred_s, PRED_COLOR)):
        x, y = dial_position(s, image.shape, k_display)
        draw.ellipse([x - rad, y - rad, x + rad, y + rad], outline=color, width=max(1, rad // 3))
    im.save(path, format="PNG", compress_level=6, optimize=False)
    return np.asarray(im)


def normalized_to_uint8(x: np.ndarray) -> np.ndarray:
    """Invert ``normalize`` for display."""
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)
