"""Differentiable layers shared by the three steering networks.

All ops take and return :class:`~steerlearn.autodiff.Node` objects; plain
arrays are accepted and treated as constants. Layout is channels-last:
images ``(N, H, W, C)``, clips ``(N, D, H, W, C)``, conv kernels
``(k_h, k_w, C, F)`` / ``(k_d, k_h, k_w, C, F)``.

Convolution is cross-correlation (the kernel is not flipped) with symmetric
zero padding. Output extent along an axis of length ``X`` is
``(X + 2p - k) / s + 1``. With ``rounding="exact"`` a non-integral extent is an
error; ``rounding="floor"`` truncates like most frameworks do for strided
"valid" convolutions.

The LSTM is the standard forget-gate cell, gate order (input i, forget f,
candidate g, output o)::

    i, f, o = sigmoid(W x + U h + b)[i, f, o]
    g       = tanh(W x + U h + b)[g]
    c'      = f * c + i * g
    h'      = o * tanh(c')
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, as_node, make
from .tensor_core import ShapeError

AXIS_NAMES = {1: ("W",), 2: ("H", "W"), 3: ("D", "H", "W")}


def _tuple(v, n):
    if isinstance(v, int):
        return (v,) * n
    v = tuple(int(a) for a in v)
    if len(v) != n:
        raise ValueError(f"expected {n} values, got {v}")
    return v


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: tuple[int, ...]
    stride: tuple[int, ...] | int = 1
    padding: tuple[int, ...] | int = 0
    rounding: str = "exact"

    def __post_init__(self):
        n = len(self.kernel)
        object.__setattr__(self, "kernel", _tuple(self.kernel, n))
        object.__setattr__(self, "stride", _tuple(self.stride, n))
        object.__setattr__(self, "padding", _tuple(self.padding, n))
        if self.filters < 1 or min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ValueError(f"invalid ConvSpec {self}")
        if self.rounding not in ("exact", "floor"):
            raise ValueError(f"rounding must be 'exact' or 'floor', got {self.rounding!r}")

    def output_shape(self, spatial: Sequence[int]) -> tuple[int, ...]:
        names = AXIS_NAMES.get(len(spatial), tuple(f"axis{i}" for i in range(len(spatial))))
        return tuple(
            conv_extent(x, k, s, p, self.rounding, name)
            for x, k, s, p, name in zip(spatial, self.kernel, self.stride, self.padding, names)
        )


def conv_extent(x: int, k: int, s: int, p: int, rounding: str = "exact", axis: str = "") -> int:
    span = x + 2 * p - k
    if span < 0:
        raise ShapeError(f"kernel extent {k} exceeds padded input extent {x + 2 * p} on axis {axis}")
    if span % s and rounding == "exact":
        raise ShapeError(
            f"non-integral output extent on axis {axis}: ({x} + 2*{p} - {k})/{s} + 1 = {span / s + 1}"
        )
    return span // s + 1


def _window(offset, stride, out_sp):
    return tuple(slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(offset, stride, out_sp))


def _conv(x, w, b, stride, padding, rounding, nsp: int) -> Node:
    x, w, b = as_node(x), as_node(w), as_node(b)
    if x.ndim != nsp + 2 or w.ndim != nsp + 2:
        raise ShapeError(f"conv{nsp}d: expected rank-{nsp + 2} input and kernel, got {x.shape} and {w.shape}")
    kernel = w.shape[:nsp]
    C, F = w.shape[nsp], w.shape[nsp + 1]
    if x.shape[-1] != C:
        raise ShapeError(f"conv{nsp}d: input has {x.shape[-1]} channels but kernel expects {C}")
    if b.shape != (F,):
        raise ShapeError(f"conv{nsp}d: bias shape {b.shape} does not match {F} filters")
    spec = ConvSpec(F, kernel, stride, padding, rounding)
    out_sp = spec.output_shape(x.shape[1:-1])
    pads = [(0, 0)] + [(p, p) for p in spec.padding] + [(0, 0)]
    xp = np.pad(x.value, pads)
    wv = w.value
    N = x.shape[0]
    out = np.zeros((N, *out_sp, F), dtype=np.result_type(xp, wv))
    offsets = list(np.ndindex(*kernel))
    for off in offsets:
        sl = (slice(None), *_window(off, spec.stride, out_sp))
        out += xp[sl] @ wv[off]
    out += b.value

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wv)
        lead = tuple(range(nsp + 1))
        for off in offsets:
            sl = (slice(None), *_window(off, spec.stride, out_sp))
            gw[off] = np.tensordot(xp[sl], g, axes=(lead, lead))
            gxp[sl] += g @ wv[off].T
        crop = (slice(None), *(slice(p, p + n) for p, n in zip(spec.padding, x.shape[1:-1])))
        return gxp[crop], gw, g.sum(axis=lead)

    return make(out, (x, w, b), vjp, f"conv{nsp}d")


def conv2d(x, w, b, stride=1, padding=0, rounding="exact") -> Node:
    """``x (N,H,W,C)``, ``w (k_h,k_w,C,F)``, ``b (F,)`` -> ``(N,H2,W2,F)``."""
    return _conv(x, w, b, stride, padding, rounding, 2)


def conv3d(x, w, b, stride=1, padding=0, rounding="exact") -> Node:
    """``x (N,D,H,W,C)``, ``w (k_d,k_h,k_w,C,F)``, ``b (F,)`` -> ``(N,D2,H2,W2,F)``."""
    return _conv(x, w, b, stride, padding, rounding, 3)


@dataclass
class BatchNormParams:
    gamma: np.ndarray | Node
    beta: np.ndarray | Node
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64, **kw) -> "BatchNormParams":
        return cls(
            np.ones(channels, dtype), np.zeros(channels, dtype), np.zeros(channels, dtype), np.ones(channels, dtype), **kw
        )


def spatial_batchnorm(x, params: BatchNormParams, mode: str = "train") -> Node:
    """Per-channel normalization over the batch and every spatial axis.

    In ``train`` mode the batch statistics are used and the running statistics
    in ``params`` are updated in place; ``infer`` mode uses the running
    statistics only.
    """
    x = as_node(x)
    gamma, beta = as_node(params.gamma), as_node(params.beta)
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm: gamma/beta shapes {gamma.shape}/{beta.shape} for {C} channels")
    axes = tuple(range(x.ndim - 1))
    xv, gv = x.value, gamma.value
    if mode == "train":
        m = xv.size // C
        if m < 2:
            raise ValueError("batchnorm: train mode needs more than one element per channel")
        mu = xv.mean(axis=axes)
        var = xv.var(axis=axes)
        mom = params.momentum
        params.running_mean[...] = mom * params.running_mean + (1 - mom) * mu
        params.running_var[...] = mom * params.running_var + (1 - mom) * var
    elif mode == "infer":
        mu, var = params.running_mean, params.running_var
    else:
        raise ValueError(f"batchnorm mode must be 'train' or 'infer', got {mode!r}")
    inv = (1.0 / np.sqrt(var + params.eps)).astype(xv.dtype)
    xhat = (xv - mu) * inv
    out = gv * xhat + beta.value

    def vjp(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gv
        if mode == "infer":
            return dxhat * inv, dgamma, dbeta
        dx = (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, dgamma, dbeta

    return make(out.astype(xv.dtype), (x, gamma, beta), vjp, "batchnorm")


@dataclass
class LstmWeights:
    """``W (4, hidden, input)``, ``U (4, hidden, hidden)``, ``b (4, hidden)``, gates ordered i, f, g, o."""

    W: np.ndarray | Node
    U: np.ndarray | Node
    b: np.ndarray | Node

    @property
    def hidden(self) -> int:
        return self.U.shape[1]


def _gate_mats(w: LstmWeights):
    W, U, b = as_node(w.W), as_node(w.U), as_node(w.b)
    H = U.shape[1]
    if W.ndim != 3 or W.shape[:2] != (4, H) or U.shape != (4, H, H) or b.shape != (4, H):
        raise ShapeError(f"lstm: inconsistent weights W{W.shape} U{U.shape} b{b.shape}")
    Wt = ad.transpose(ad.reshape(W, (4 * H, W.shape[2])))
    Ut = ad.transpose(ad.reshape(U, (4 * H, H)))
    return Wt, Ut, ad.reshape(b, (4 * H,)), H


def _step(x, h, c, Wt, Ut, bf, H):
    z = ad.matmul(x, Wt) + ad.matmul(h, Ut) + bf
    i = ad.sigmoid(z[..., 0:H])
    f = ad.sigmoid(z[..., H : 2 * H])
    g = ad.tanh(z[..., 2 * H : 3 * H])
    o = ad.sigmoid(z[..., 3 * H : 4 * H])
    c2 = f * c + i * g
    return o * ad.tanh(c2), c2


def lstm_step(x, h, c, w: LstmWeights) -> tuple[Node, Node]:
    """One cell update. ``x (..., input)``, ``h``/``c`` ``(..., hidden)``."""
    x, h, c = as_node(x), as_node(h), as_node(c)
    Wt, Ut, bf, H = _gate_mats(w)
    if x.shape[-1] != Wt.shape[0] or h.shape[-1] != H or c.shape != h.shape:
        raise ShapeError(f"lstm_step: x{x.shape} h{h.shape} c{c.shape} do not fit hidden={H}, input={Wt.shape[0]}")
    return _step(x, h, c, Wt, Ut, bf, H)


def lstm_layer(xs, w: LstmWeights, h0=None, c0=None) -> Node:
    """Unroll over time. ``xs`` is ``(T, input)`` or ``(N, T, input)``; returns every hidden state."""
    xs = as_node(xs)
    if xs.ndim not in (2, 3):
        raise ShapeError(f"lstm_layer: expected (T, input) or (N, T, input), got {xs.shape}")
    taxis = xs.ndim - 2
    T = xs.shape[taxis]
    if T == 0:
        raise ValueError("lstm_layer: empty sequence")
    Wt, Ut, bf, H = _gate_mats(w)
    if xs.shape[-1] != Wt.shape[0]:
        raise ShapeError(f"lstm_layer: input width {xs.shape[-1]} but weights expect {Wt.shape[0]}")
    state_shape = xs.shape[:taxis] + (H,)
    h = as_node(np.zeros(state_shape, xs.dtype) if h0 is None else h0)
    c = as_node(np.zeros(state_shape, xs.dtype) if c0 is None else c0)
    hs = []
    for t in range(T):
        xt = xs[:, t] if taxis else xs[t]
        h, c = _step(xt, h, c, Wt, Ut, bf, H)
        hs.append(h)
    return ad.stack(hs, axis=taxis)


def dense(x, W, b) -> Node:
    x, W, b = as_node(x), as_node(W), as_node(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: x{x.shape} W{W.shape} b{b.shape} do not fit")
    return ad.matmul(x, W) + b


def residual_block(x, inner: Callable[[Node], Node], projection: Callable[[Node], Node] | None = None) -> Node:
    """``inner(x) + shortcut(x)``; the shortcut is identity unless a projection is given."""
    x = as_node(x)
    y = inner(x)
    short = projection(x) if projection is not None else x
    if y.shape != short.shape:
        raise ShapeError(
            f"residual_block: inner output {y.shape} does not match shortcut {short.shape}"
            + ("" if projection else "; pass a projection")
        )
    return y + short


def maxpool2d(x, size: int = 2, stride: int | None = None, rounding: str = "floor") -> Node:
    x = as_node(x)
    stride = size if stride is None else stride
    N, Hh, Ww, C = x.shape
    out_sp = (conv_extent(Hh, size, stride, 0, rounding, "H"), conv_extent(Ww, size, stride, 0, rounding, "W"))
    offsets = list(np.ndindex(size, size))
    cands = np.stack([x.value[(slice(None), *_window(o, (stride, stride), out_sp))] for o in offsets])
    arg = cands.argmax(axis=0)
    out = np.take_along_axis(cands, arg[None], axis=0)[0]

    def vjp(g):
        gx = np.zeros_like(x.value)
        for k, o in enumerate(offsets):
            gx[(slice(None), *_window(o, (stride, stride), out_sp))] += g * (arg == k)
        return (gx,)

    return make(out, (x,), vjp, "maxpool2d")


def global_avg_pool(x) -> Node:
    """Mean over every spatial axis: ``(N, ..., C) -> (N, C)``."""
    x = as_node(x)
    return ad.mean(x, axes=tuple(range(1, x.ndim - 1)))


def flatten(x) -> Node:
    x = as_node(x)
    return ad.reshape(x, (x.shape[0], -1))
