"""Define-by-run reverse-mode differentiation.

Every forward operation creates a :class:`Node` holding its value, its parent
nodes and a vector-Jacobian product rule. :func:`backward` walks the recorded
DAG from a scalar root in reverse topological order and sums the incoming
gradients of every node. Nothing on the graph is mutated, so backward can be
called any number of times.

:func:`finite_diff_check` is the independent oracle: central differences in
double precision against the analytic gradients.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor_core as tc

_ids = itertools.count()


class Node:
    __slots__ = ("id", "value", "parents", "vjp", "op", "name", "requires_grad")
    __array_priority__ = 100  # so ndarray <op> Node dispatches to Node

    def __init__(self, value, parents=(), vjp=None, op="leaf", name=None, requires_grad=True):
        self.id = next(_ids)
        self.value = np.asarray(value)
        self.parents: tuple[Node, ...] = tuple(parents)
        self.vjp = vjp
        self.op = op
        self.name = name
        self.requires_grad = requires_grad

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.value.shape}, id={self.id})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_node(other)))

    def __rsub__(self, other):
        return add(as_node(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def leaf(value, name=None, dtype=None) -> Node:
    """A differentiable input (parameter, image, ...)."""
    return Node(np.asarray(value, dtype=dtype), name=name)


def constant(value, dtype=None) -> Node:
    return Node(np.asarray(value, dtype=dtype), op="const", requires_grad=False)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def make(value, parents, vjp, op) -> Node:
    """Record an op. ``vjp(g)`` returns one gradient (or None) per parent."""
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    return Node(value, parents, vjp if needs else None, op=op, requires_grad=needs)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise ---------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape
    return make(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    return make(av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul")


def neg(a: Node) -> Node:
    return make(-a.value, (a,), lambda g: (-g,), "neg")


def scale(a: Node, alpha: float) -> Node:
    return make(tc.map_unary(a.value, "scale", alpha), (a,), lambda g: (g * alpha,), "scale")


def square(a: Node) -> Node:
    v = a.value
    return make(v * v, (a,), lambda g: (2 * v * g,), "square")


def relu(a: Node) -> Node:
    mask = a.value > 0  # subgradient at exactly 0 is 0
    return make(tc.map_unary(a.value, "relu"), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(a: Node) -> Node:
    out = tc.sigmoid(a.value)
    return make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


# --- linear algebra / shape ---------------------------------------------


def matmul(a, b) -> Node:
    """``a @ b`` where ``a`` may carry leading batch axes and ``b`` is 2-D."""
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise tc.ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    if av.ndim == 2:
        out = tc.matmul(av, bv)
    else:
        out = av @ bv

    def vjp(g):
        ga = g @ bv.T
        gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return make(out, (a, b), vjp, "matmul")


def transpose(a: Node, axes=None) -> Node:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a: Node, shape) -> Node:
    src = a.shape
    return make(a.value.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def getitem(a: Node, index) -> Node:
    src, dt = a.shape, a.dtype
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (slice, int)) for p in parts)

    def vjp(g):
        out = np.zeros(src, dtype=dt)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make(a.value[index], (a,), vjp, "getitem")


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]
    return make(
        np.concatenate([n.value for n in nodes], axis=axis),
        nodes,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def stack(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    n = len(nodes)
    return make(
        np.stack([x.value for x in nodes], axis=axis),
        nodes,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


def pad(a: Node, amounts) -> Node:
    amounts = [tuple(p) for p in amounts]
    out = tc.pad_crop(a.value, amounts, "zero-pad")
    return make(out, (a,), lambda g: (tc.pad_crop(g, amounts, "crop"),), "pad")


# --- reductions ----------------------------------------------------------


def sum(a: Node, axes=None, keepdims=False) -> Node:  # noqa: A001
    src = a.shape
    axes_t = tuple(range(a.ndim)) if axes is None else tuple(ax % a.ndim for ax in axes)
    out = tc.reduce(a.value, axes_t, "sum", keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes_t) if axes_t else g
        return (np.broadcast_to(g, src).copy(),)

    return make(out, (a,), vjp, "sum")


def mean(a: Node, axes=None, keepdims=False) -> Node:
    axes_t = tuple(range(a.ndim)) if axes is None else tuple(ax % a.ndim for ax in axes)
    count = int(np.prod([a.shape[ax] for ax in axes_t])) if axes_t else 1
    return scale(sum(a, axes_t, keepdims), 1.0 / count)


# --- backward ------------------------------------------------------------


def _topo_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack_.append((node, True))
        for p in node.parents:
            if p.id not in seen and p.requires_grad:
                stack_.append((p, False))
    return order


def backward(root: Node, wrt: Sequence[Node] | None = None) -> dict[int, np.ndarray]:
    """Gradients of the scalar ``root`` keyed by leaf node id.

    With ``wrt`` given, exactly those nodes are reported and any that the root
    does not depend on get a zero tensor. Otherwise every differentiable leaf
    reachable from the root is reported.
    """
    if root.value.ndim != 0:
        raise ValueError(f"backward needs a rank-0 root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {root.id: np.ones((), dtype=root.dtype)}
    leaves: dict[int, Node] = {}
    for node in reversed(_topo_order(root)):
        g = grads.get(node.id)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                leaves[node.id] = node
            continue
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    if wrt is not None:
        return {n.id: grads.get(n.id, np.zeros(n.shape, dtype=n.dtype)) for n in wrt}
    return {i: grads[i] for i in leaves}


def grad(f: Callable[..., Node], *inputs: np.ndarray) -> list[np.ndarray]:
    """Gradients of scalar ``f(*nodes)`` with respect to each array input."""
    nodes = [leaf(x) for x in inputs]
    out = backward(f(*nodes), wrt=nodes)
    return [out[n.id] for n in nodes]


# --- finite differences --------------------------------------------------


@dataclass
class GradientReport:
    max_rel: list[float] = field(default_factory=list)
    max_abs: list[float] = field(default_factory=list)

    @property
    def worst_rel(self) -> float:
        return max(self.max_rel, default=0.0)

    @property
    def worst_abs(self) -> float:
        return max(self.max_abs, default=0.0)


def numeric_grad(f: Callable[..., Node], inputs: list[np.ndarray], i: int, eps: float) -> np.ndarray:
    x = inputs[i]
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = float(f(*[constant(v) for v in inputs]).value)
        flat[k] = orig - eps
        fm = float(f(*[constant(v) for v in inputs]).value)
        flat[k] = orig
        out.reshape(-1)[k] = (fp - fm) / (2 * eps)
    return out


def finite_diff_check(
    f: Callable[..., Node],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
    precision: str = "double",
    richardson: bool = False,
) -> GradientReport:
    """Compare :func:`backward` with central differences for every input.

    Relative error per element is ``|a - n| / max(|a|, |n|, 1e-8)``.

    With ``richardson`` the numeric gradient is ``(4 D(eps/2) - D(eps)) / 3``
    where ``D`` is the central difference. That cancels the ``eps^2`` error
    term, so a larger ``eps`` (around 1e-3) can be used and rounding noise in
    ``f`` no longer swamps gradient components near zero.
    """
    dt = tc.dtype_for(precision)
    inputs = [np.array(x, dtype=dt) for x in inputs]
    analytic = grad(f, *[x.copy() for x in inputs])
    report = GradientReport()
    for i, a in enumerate(analytic):
        n = numeric_grad(f, inputs, i, eps)
        if richardson:
            n = (4 * numeric_grad(f, inputs, i, eps / 2) - n) / 3
        diff = np.abs(a - n)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        report.max_rel.append(float(np.max(diff / denom)) if diff.size else 0.0)
        report.max_abs.append(float(np.max(diff)) if diff.size else 0.0)
    return report
