"""Layer-list model representation and its forward executor.

A :class:`ModelGraph` is an ordered list of :class:`Layer` records in the
style of a functional Keras model: each layer names its inbound layers (the
previous layer by default), so residual shortcuts are ``add`` layers with two
inputs. Shapes are tracked per sample, without the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import nn_ops as nn
from ..autodiff import Node
from ..tensor_core import SeededRng, ShapeError, dtype_for


@dataclass
class Layer:
    name: str
    kind: str
    inputs: tuple[str, ...]
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    config: dict = field(default_factory=dict)
    params: tuple[str, ...] = ()
    buffers: tuple[str, ...] = ()


@dataclass
class ModelGraph:
    model_id: str
    input_shape: tuple[int, ...]
    precision: str
    layers: list[Layer] = field(default_factory=list)
    params: dict[str, np.ndarray] = field(default_factory=dict)
    trainable: dict[str, bool] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    build_args: dict = field(default_factory=dict)

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if self.trainable[n]]

    def frozen_names(self) -> list[str]:
        return [n for n in self.params if not self.trainable[n]]

    def freeze(self, n_layers: int) -> None:
        """Mark the parameters of the first ``n_layers`` layers as not trainable."""
        if not 0 <= n_layers <= len(self.layers):
            raise ValueError(f"freeze_layers={n_layers} outside [0, {len(self.layers)}]")
        for i, layer in enumerate(self.layers):
            for p in layer.params:
                self.trainable[p] = i >= n_layers

    def validate(self) -> None:
        seen: dict[str, Layer] = {}
        for layer in self.layers:
            for src in layer.inputs:
                if src not in seen:
                    raise ShapeError(f"layer {layer.name} reads {src!r} before it is defined")
                if seen[src].out_shape != layer.in_shape:
                    raise ShapeError(
                        f"layer {layer.name} expects {layer.in_shape} but {src} produces {seen[src].out_shape}"
                    )
            seen[layer.name] = layer
        if len(set(self.params)) != len(self.params):
            raise ValueError("duplicate parameter names")
        if self.layers[-1].out_shape != ():
            raise ShapeError(f"model output must be a scalar per sample, got {self.layers[-1].out_shape}")


def param_count(g: ModelGraph, include_buffers: bool = False) -> int:
    """Total element count over all parameters, trainable or frozen.

    Batch-norm running statistics are buffers, not parameters, and are only
    counted with ``include_buffers=True`` (Keras reports them as
    "non-trainable params").
    """
    n = sum(int(p.size) for p in g.params.values())
    if include_buffers:
        n += sum(int(b.size) for b in g.buffers.values())
    return n


def param_nodes(g: ModelGraph, only_trainable: bool = True) -> dict[str, Node]:
    """Leaf nodes for differentiable parameters, constants for the rest."""
    return {
        name: ad.leaf(v, name=name) if (g.trainable[name] or not only_trainable) else ad.constant(v)
        for name, v in g.params.items()
    }


def forward(g: ModelGraph, x, training: bool = False, nodes: dict[str, Node] | None = None) -> Node:
    """Run the model on a batch ``x`` of shape ``(N, *input_shape)``; returns ``(N,)``.

    In training mode batch norm uses batch statistics and updates the running
    statistics held in ``g.buffers``.
    """
    x = ad.as_node(x)
    if tuple(x.shape[1:]) != tuple(g.input_shape):
        raise ShapeError(f"{g.model_id}: expected input (N, {', '.join(map(str, g.input_shape))}), got {x.shape}")
    if nodes is None:
        nodes = {k: ad.constant(v) for k, v in g.params.items()}
    outs: dict[str, Node] = {}
    for layer in g.layers:
        ins = [outs[s] for s in layer.inputs] or [x]
        outs[layer.name] = _run_layer(g, layer, ins, nodes, training)
    return outs[g.layers[-1].name]


def _act(y: Node, activation: str | None) -> Node:
    if activation == "relu":
        return ad.relu(y)
    if activation == "tanh":
        return ad.tanh(y)
    return y


def _run_layer(g: ModelGraph, layer: Layer, ins: list[Node], P: dict[str, Node], training: bool) -> Node:
    cfg, kind = layer.config, layer.kind
    h = ins[0]
    name = layer.name
    if kind == "input":
        return h
    if kind == "zeropad":
        p = cfg["pad"]
        return ad.pad(h, [(0, 0)] + [(p, p)] * (h.ndim - 2) + [(0, 0)])
    if kind in ("conv2d", "conv3d"):
        op = nn.conv2d if kind == "conv2d" else nn.conv3d
        args = dict(stride=cfg["stride"], padding=cfg["padding"], rounding=cfg["rounding"])
        if cfg.get("time_distributed"):
            N, S = h.shape[:2]
            y = op(ad.reshape(h, (N * S, *h.shape[2:])), P[f"{name}/kernel"], P[f"{name}/bias"], **args)
            y = ad.reshape(y, (N, S, *y.shape[1:]))
        else:
            y = op(h, P[f"{name}/kernel"], P[f"{name}/bias"], **args)
        return _act(y, cfg.get("activation"))
    if kind == "bn":
        params = nn.BatchNormParams(
            P[f"{name}/gamma"],
            P[f"{name}/beta"],
            g.buffers[f"{name}/running_mean"],
            g.buffers[f"{name}/running_var"],
            momentum=cfg["momentum"],
            eps=cfg["eps"],
        )
        return nn.spatial_batchnorm(h, params, "train" if training else "infer")
    if kind == "relu":
        return ad.relu(h)
    if kind == "maxpool2d":
        return nn.maxpool2d(h, cfg["size"], cfg["stride"])
    if kind == "gap":
        return nn.global_avg_pool(h)
    if kind == "flatten":
        return nn.flatten(h)
    if kind == "flatten_steps":
        return ad.reshape(h, (h.shape[0], h.shape[1], -1))
    if kind == "lstm":
        w = nn.LstmWeights(P[f"{name}/W"], P[f"{name}/U"], P[f"{name}/b"])
        hs = nn.lstm_layer(h, w)
        return hs if cfg["return_sequences"] else hs[:, -1]
    if kind == "dense":
        return _act(nn.dense(h, P[f"{name}/kernel"], P[f"{name}/bias"]), cfg.get("activation"))
    if kind == "add":
        return ins[0] + ins[1]
    if kind == "squeeze":
        return ad.reshape(h, (h.shape[0],))
    raise ValueError(f"unknown layer kind {kind!r}")


class GraphBuilder:
    """Appends layers with shape inference and seeded initialization.

    Conv and dense kernels use He fan-in scaling (normal, std sqrt(2/fan_in));
    biases start at zero, batch norm at gamma=1, beta=0. LSTM matrices are
    uniform in +-1/sqrt(hidden).
    """

    def __init__(self, model_id: str, input_shape, seed: int = 0, precision: str = "single"):
        self.g = ModelGraph(model_id, tuple(input_shape), precision)
        self.rng = SeededRng(seed)
        self.dtype = dtype_for(precision)
        self.last = self._append("input", "input", (), tuple(input_shape), tuple(input_shape))

    @property
    def shape(self):
        return self.g.layer(self.last).out_shape

    def _append(self, name, kind, inputs, in_shape, out_shape, config=None, params=None, buffers=None) -> str:
        if any(layer.name == name for layer in self.g.layers):
            raise ValueError(f"duplicate layer name {name!r}")
        params = params or {}
        buffers = buffers or {}
        for k, v in params.items():
            self.g.params[f"{name}/{k}"] = v
            self.g.trainable[f"{name}/{k}"] = True
        for k, v in buffers.items():
            self.g.buffers[f"{name}/{k}"] = v
        layer = Layer(
            name,
            kind,
            tuple(inputs),
            tuple(in_shape),
            tuple(out_shape),
            dict(config or {}),
            tuple(f"{name}/{k}" for k in params),
            tuple(f"{name}/{k}" for k in buffers),
        )
        self.g.layers.append(layer)
        self.last = name
        return name

    def _he(self, shape, fan_in):
        return self.rng.normal(shape, std=np.sqrt(2.0 / fan_in)).astype(self.dtype)

    def _src(self, src):
        src = self.last if src is None else src
        return src, self.g.layer(src).out_shape

    def conv(self, name, filters, kernel, stride=1, padding=0, rounding="floor", activation=None, src=None):
        src, shape = self._src(src)
        nsp = len(kernel)
        td = len(shape) == nsp + 2  # leading sequence axis
        spatial, C = shape[-nsp - 1 : -1], shape[-1]
        spec = nn.ConvSpec(filters, tuple(kernel), stride, padding, rounding)
        out = spec.output_shape(spatial) + (filters,)
        if td:
            out = (shape[0],) + out
        fan_in = int(np.prod(kernel)) * C
        params = {
            "kernel": self._he((*kernel, C, filters), fan_in),
            "bias": np.zeros(filters, self.dtype),
        }
        cfg = dict(
            filters=filters,
            kernel=list(spec.kernel),
            stride=list(spec.stride),
            padding=list(spec.padding),
            rounding=rounding,
            activation=activation,
            time_distributed=td,
        )
        return self._append(name, f"conv{nsp}d", [src], shape, out, cfg, params)

    def bn(self, name, momentum=0.99, eps=1e-5, src=None):
        src, shape = self._src(src)
        C = shape[-1]
        params = {"gamma": np.ones(C, self.dtype), "beta": np.zeros(C, self.dtype)}
        buffers = {"running_mean": np.zeros(C, self.dtype), "running_var": np.ones(C, self.dtype)}
        return self._append(name, "bn", [src], shape, shape, dict(momentum=momentum, eps=eps), params, buffers)

    def relu(self, name, src=None):
        src, shape = self._src(src)
        return self._append(name, "relu", [src], shape, shape)

    def zeropad(self, name, pad, src=None):
        src, shape = self._src(src)
        out = tuple(n + 2 * pad for n in shape[:-1]) + (shape[-1],)
        return self._append(name, "zeropad", [src], shape, out, dict(pad=pad))

    def maxpool(self, name, size, stride, src=None):
        src, shape = self._src(src)
        out = tuple(nn.conv_extent(n, size, stride, 0, "floor") for n in shape[:-1]) + (shape[-1],)
        return self._append(name, "maxpool2d", [src], shape, out, dict(size=size, stride=stride))

    def gap(self, name, src=None):
        src, shape = self._src(src)
        return self._append(name, "gap", [src], shape, (shape[-1],))

    def flatten(self, name, src=None):
        src, shape = self._src(src)
        return self._append(name, "flatten", [src], shape, (int(np.prod(shape)),))

    def flatten_steps(self, name, src=None):
        src, shape = self._src(src)
        return self._append(name, "flatten_steps", [src], shape, (shape[0], int(np.prod(shape[1:]))))

    def lstm(self, name, hidden, return_sequences, src=None):
        src, shape = self._src(src)
        T, I = shape
        bound = 1.0 / np.sqrt(hidden)
        params = {
            "W": self.rng.uniform(-bound, bound, (4, hidden, I)).astype(self.dtype),
            "U": self.rng.uniform(-bound, bound, (4, hidden, hidden)).astype(self.dtype),
            "b": np.zeros((4, hidden), self.dtype),
        }
        out = (T, hidden) if return_sequences else (hidden,)
        return self._append(name, "lstm", [src], shape, out, dict(hidden=hidden, return_sequences=return_sequences), params)

    def dense(self, name, units, activation=None, src=None):
        src, shape = self._src(src)
        (n_in,) = shape
        params = {"kernel": self._he((n_in, units), n_in), "bias": np.zeros(units, self.dtype)}
        return self._append(name, "dense", [src], shape, (units,), dict(units=units, activation=activation), params)

    def add(self, name, a, b):
        sa, sb = self.g.layer(a).out_shape, self.g.layer(b).out_shape
        if sa != sb:
            raise ShapeError(f"add {name}: {a} gives {sa} but {b} gives {sb}")
        return self._append(name, "add", [a, b], sa, sa)

    def squeeze(self, name="output"):
        src, shape = self._src(None)
        if shape != (1,):
            raise ShapeError(f"final layer must have one unit, got {shape}")
        return self._append(name, "squeeze", [src], shape, ())

    def finish(self, **build_args) -> ModelGraph:
        self.g.build_args = build_args
        self.g.validate()
        return self.g
