"""Loss, Adam, the training loop, evaluation and the predict-zero baseline."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import PipelineSpec, apply_pipeline, normalize
from .dataset import batches
from .models import ModelGraph, forward, param_nodes, save_checkpoint

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.loss = epoch, batch, loss


def mse(pred, y) -> ad.Node:
    """Mean squared error as a differentiable scalar."""
    pred = ad.as_node(pred)
    y = np.asarray(y, dtype=pred.dtype)
    if pred.shape != y.shape:
        raise ValueError(f"mse: prediction shape {pred.shape} != label shape {y.shape}")
    if y.size == 0:
        raise ValueError("mse of an empty batch")
    return ad.mean(ad.square(pred - y))


def mse_value(pred, y) -> float:
    pred, y = np.asarray(pred, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ValueError(f"mse: prediction shape {pred.shape} != label shape {y.shape}")
    if y.size == 0:
        raise ValueError("mse of an empty set")
    return float(np.mean((y - pred) ** 2))


def rmse(pred, y) -> float:
    return math.sqrt(mse_value(pred, y))


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr_at(self, t: int) -> float:
        """Decayed step size ``lr / (1 + decay * t)``."""
        return self.lr / (1.0 + self.decay * t)


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update of ``params`` in place; ``t`` counts steps from 1."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if params[name].shape != g.shape:
            raise ValueError(f"{name}: parameter shape {params[name].shape} != gradient shape {g.shape}")
    state.t += 1
    t = state.t
    lr = state.lr_at(t)
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 32
    batch_size: int = 32
    seed: int = 0
    precision: str = "single"
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_mode: str = "per_epochs"
    timing: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    @property
    def decay(self) -> float:
        if self.decay_mode == "per_epochs":
            return self.lr / self.epochs
        if self.decay_mode == "per_batch":
            return self.lr / self.batch_size
        if self.decay_mode == "none":
            return 0.0
        raise ValueError(f"unknown decay_mode {self.decay_mode!r}")


@dataclass
class History:
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    test_rmse: float | None = None
    seed: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={self.seed}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_rmse", "val_rmse", "seconds"])
            for i, (tr, va, s) in enumerate(zip(self.train_rmse, self.val_rmse, self.seconds), start=1):
                w.writerow([i, repr(tr), repr(va), f"{s:.3f}"])


def prepare_batch(samples, idxs, pipeline: PipelineSpec | None, epoch: int, train: bool, precision: str = "single"):
    """Load, augment (training only) and normalize a batch.

    Raw uint8 frames go through ``pipeline`` (its geometry-only view when
    ``train`` is false) and :func:`normalize`; float inputs pass through as-is.
    """
    xs, ys = [], []
    for i in idxs:
        raw, label = samples.get(int(i))
        raw = np.asarray(raw)
        if raw.dtype == np.uint8:
            if pipeline is not None:
                spec = pipeline if train else pipeline.eval_view()
                s = apply_pipeline(spec, raw, label, int(i), epoch, tag="train" if train else "validation")
                raw, label = s.image, s.steering
            xs.append(normalize(raw, precision))
        else:
            xs.append(raw)
        ys.append(label)
    dt = np.float32 if precision == "single" else np.float64
    return np.stack(xs).astype(dt, copy=False), np.asarray(ys, dtype=dt)


def predict(g: ModelGraph, samples, pipeline: PipelineSpec | None = None, batch_size: int = 32) -> np.ndarray:
    out = []
    idx = list(range(len(samples)))
    for b in batches(idx, batch_size, shuffle=False):
        x, _ = prepare_batch(samples, b, pipeline, 0, train=False, precision=g.precision)
        out.append(forward(g, x, training=False).value.astype(np.float64))
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(g: ModelGraph, samples, pipeline: PipelineSpec | None = None, batch_size: int = 32) -> float:
    """RMSE of the model in inference mode with no augmentation randomness."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate on an empty set")
    return rmse(predict(g, samples, pipeline, batch_size), samples.labels)


def zero_baseline(labels) -> float:
    """RMSE of always predicting 0, i.e. ``sqrt(mean(y^2))``."""
    y = np.asarray(getattr(labels, "labels", labels), dtype=np.float64)
    return rmse(np.zeros_like(y), y)


def train(
    g: ModelGraph,
    train_set,
    config: TrainConfig,
    val_set=None,
    pipeline: PipelineSpec | None = None,
    out_dir=None,
    on_epoch=None,
) -> History:
    """Mini-batch Adam on MSE over the trainable parameters of ``g``.

    Training batches are augmented with ``pipeline``; validation only sees its
    geometry ops. With ``out_dir`` the best-validation model is written to
    ``best.stck``, the final one to ``last.stck`` and the history to
    ``history.csv``.
    """
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps, config.decay)
    hist = History(seed=config.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    n = len(train_set)
    if n == 0:
        raise ValueError("empty training set")
    best = math.inf
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        sse = 0.0
        for bi, idxs in enumerate(batches(list(range(n)), config.batch_size, config.seed, True, epoch)):
            x, y = prepare_batch(train_set, idxs, pipeline, epoch, train=True, precision=config.precision)
            nodes = param_nodes(g)
            pred = forward(g, x, training=True, nodes=nodes)
            loss = mse(pred, y)
            lv = float(loss.value)
            if not math.isfinite(lv):
                raise DivergenceError(epoch + 1, bi + 1, lv)
            wrt = [nodes[k] for k in g.trainable_names()]
            grads = ad.backward(loss, wrt=wrt)
            adam_step(g.params, {nd.name: grads[nd.id] for nd in wrt}, state)
            sse += float(np.sum((pred.value.astype(np.float64) - y) ** 2))
        hist.train_rmse.append(math.sqrt(sse / n))
        hist.val_rmse.append(evaluate(g, val_set, pipeline, config.batch_size) if val_set is not None and len(val_set) else math.nan)
        hist.seconds.append(time.perf_counter() - t0 if config.timing else 0.0)
        score = hist.val_rmse[-1] if not math.isnan(hist.val_rmse[-1]) else hist.train_rmse[-1]
        if score < best:
            best, hist.best_epoch = score, epoch + 1
            if out_dir is not None:
                save_checkpoint(g, out_dir / "best.stck", epoch + 1, _rmse_meta(hist))
        log.info("epoch %d train_rmse=%.5f val_rmse=%.5f", epoch + 1, hist.train_rmse[-1], hist.val_rmse[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, hist)
    if out_dir is not None:
        save_checkpoint(g, out_dir / "last.stck", config.epochs, _rmse_meta(hist))
        hist.write_csv(out_dir / "history.csv")
    return hist


def _rmse_meta(hist: History) -> list:
    return [[tr, None if math.isnan(va) else va] for tr, va in zip(hist.train_rmse, hist.val_rmse)]
