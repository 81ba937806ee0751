"""Dense real tensors and the handful of primitives the rest of the package needs.

Tensors are plain row-major ``numpy.ndarray`` objects of dtype float32
("single") or float64 ("double"). Images follow the channels-last convention:
``(H, W, C)`` for frames and ``(D, H, W, C)`` for frame sequences.

Random numbers come from :class:`SeededRng`, a thin wrapper over numpy's
PCG64 bit generator (O'Neill's permuted congruential generator, 128-bit state).
PCG64 output for a given seed is fixed by numpy's stream-compatibility policy,
so the same seed gives the same stream on every platform.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

PRECISIONS = {"single": np.float32, "double": np.float64}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def dtype_for(precision: str) -> np.dtype:
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; expected one of {sorted(PRECISIONS)}") from None


def precision_of(t: np.ndarray) -> str:
    if t.dtype == np.float32:
        return "single"
    if t.dtype == np.float64:
        return "double"
    raise TypeError(f"unsupported tensor dtype {t.dtype}")


def tensor(data, precision: str = "double") -> np.ndarray:
    return np.array(data, dtype=dtype_for(precision))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain 2-D matrix product with explicit shape and precision checks."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    if a.dtype != b.dtype:
        raise TypeError(f"matmul: precision mismatch {a.dtype} vs {b.dtype}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def map_unary(t: np.ndarray, f: str, alpha: float = 1.0) -> np.ndarray:
    """Apply ``relu``, ``tanh``, ``negate``, ``scale`` (by ``alpha``) or ``sigmoid``."""
    if f == "relu":
        return np.maximum(t, 0).astype(t.dtype, copy=False)
    if f == "tanh":
        return np.tanh(t)
    if f == "negate":
        return -t
    if f == "scale":
        return (t * alpha).astype(t.dtype, copy=False)
    if f == "sigmoid":
        return sigmoid(t)
    raise ValueError(f"unknown unary map {f!r}")


def pad_crop(t: np.ndarray, amounts: Sequence[tuple[int, int]], mode: str = "zero-pad") -> np.ndarray:
    """Zero-pad or crop each axis by ``(leading, trailing)`` element counts.

    ``amounts`` may be shorter than ``t.ndim``; missing trailing axes are left alone.
    """
    if len(amounts) > t.ndim:
        raise ShapeError(f"pad_crop: {len(amounts)} axis amounts for rank-{t.ndim} tensor")
    amounts = [tuple(int(v) for v in a) for a in amounts] + [(0, 0)] * (t.ndim - len(amounts))
    if any(v < 0 for a in amounts for v in a):
        raise ValueError("pad_crop: amounts must be non-negative")
    if mode == "zero-pad":
        return np.pad(t, amounts)
    if mode == "crop":
        index = []
        for axis, (lead, trail) in enumerate(amounts):
            n = t.shape[axis]
            if lead + trail > n:
                raise ShapeError(f"pad_crop: cannot crop {lead}+{trail} from axis {axis} of extent {n}")
            index.append(slice(lead, n - trail))
        return t[tuple(index)].copy()
    raise ValueError(f"unknown pad_crop mode {mode!r}")


def _normalize_axes(axes: Iterable[int], ndim: int) -> tuple[int, ...]:
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"reduce: axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ValueError(f"reduce: repeated axes {list(axes)}")
    return tuple(out)


def reduce(t: np.ndarray, axes: Iterable[int] | None = None, kind: str = "sum", keepdims: bool = False) -> np.ndarray:
    """Sum, mean or max over ``axes`` (``None`` means all axes, ``[]`` means none)."""
    axes = tuple(range(t.ndim)) if axes is None else _normalize_axes(axes, t.ndim)
    if not axes:
        return t.copy()
    fn = {"sum": np.sum, "mean": np.mean, "max": np.max}.get(kind)
    if fn is None:
        raise ValueError(f"unknown reduction {kind!r}")
    return np.asarray(fn(t, axis=axes, keepdims=keepdims), dtype=t.dtype)


class SeededRng:
    """Deterministic random source (numpy PCG64) keyed by a 64-bit seed."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @classmethod
    def derived(cls, *keys: int) -> "SeededRng":
        """Independent stream for a tuple of integer keys, e.g. ``(master, epoch, index)``.

        The keys are mixed by numpy's ``SeedSequence`` hash, so neighbouring
        indices give uncorrelated streams.
        """
        words = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
        return cls(int(words[0]) | (int(words[1]) << 32))

    def normal(self, shape, std: float = 1.0, precision: str = "double") -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(dtype_for(precision))

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None, precision: str = "double"):
        v = self._gen.uniform(low, high, shape)
        return v if shape is None else v.astype(dtype_for(precision))

    def integers(self, low: int, high: int, shape=None):
        """Integers in the closed range ``[low, high]``."""
        v = self._gen.integers(low, high, size=shape, endpoint=True)
        return int(v) if shape is None else v

    def random(self) -> float:
        return float(self._gen.random())

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
