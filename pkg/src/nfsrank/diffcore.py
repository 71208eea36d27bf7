"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Every operation returns a ``Node`` holding the forward value, its parent nodes
and a backward rule mapping the upstream gradient to per-parent gradients.
``backward`` propagates from a scalar root to every reachable node, including
input leaves, accumulating additively across shared subgraphs. Mode-dependent
ops (dropout, batch norm) are built by callers as custom ``Node``s.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("value", "parents", "grad", "_backward")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.grad: np.ndarray | None = None
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape})"


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _require(cond: bool, op: str, msg: str):
    if not cond:
        raise ShapeError(f"{op}: {msg}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out axes numpy broadcasting added or expanded, back to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    return Node(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        value = a.value - b.value
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None
    return Node(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None
    return Node(
        value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _require(a.value.ndim == 2 and b.value.ndim == 2, "matmul", f"needs 2-D operands, got {a.shape} and {b.shape}")
    _require(a.shape[1] == b.shape[0], "matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    return Node(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def scale(a, c: float) -> Node:
    a = as_node(a)
    c = float(c)
    return Node(a.value * c, (a,), lambda g: (g * c,))


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Node:
    a = as_node(a)
    # stable in both tails
    out = np.empty_like(a.value)
    pos = a.value >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.value[pos]))
    ex = np.exp(a.value[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Node(out, (a,), lambda g: (g * out * (1.0 - out),))


def log1p(a) -> Node:
    a = as_node(a)
    _require(bool(np.all(a.value > -1.0)), "log1p", "domain is x > -1")
    return Node(np.log1p(a.value), (a,), lambda g: (g / (1.0 + a.value),))


def reciprocal(a) -> Node:
    a = as_node(a)
    inv = 1.0 / a.value
    return Node(inv, (a,), lambda g: (-g * inv * inv,))


def signed_log1p(a) -> Node:
    """sign(x) * log1p(|x|), derivative 1 / (1 + |x|)."""
    a = as_node(a)
    return Node(
        np.sign(a.value) * np.log1p(np.abs(a.value)),
        (a,),
        lambda g: (g / (1.0 + np.abs(a.value)),),
    )


def softsign(a) -> Node:
    """x / (1 + |x|), derivative 1 / (1 + |x|)^2."""
    a = as_node(a)
    denom = 1.0 + np.abs(a.value)
    return Node(a.value / denom, (a,), lambda g: (g / (denom * denom),))


def softmax(a) -> Node:
    """Softmax over the last axis."""
    a = as_node(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return Node(out, (a,), backward)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    _require(len(nodes) > 0, "concat", "needs at least one operand")
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[n.shape for n in nodes]}") from None
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]
    return Node(value, nodes, lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_(a, index) -> Node:
    """Basic (non-fancy) indexing; backward scatters into zeros."""
    a = as_node(a)
    value = a.value[index]

    def backward(g):
        buf = np.zeros_like(a.value)
        buf[index] = g
        return (buf,)

    return Node(value, (a,), backward)


def transpose(a) -> Node:
    a = as_node(a)
    _require(a.value.ndim == 2, "transpose", f"needs a 2-D operand, got {a.shape}")
    return Node(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Node:
    a = as_node(a)
    return Node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def sum_(a, axis: int | None = None) -> Node:
    a = as_node(a)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Node(a.value.sum(axis=axis), (a,), backward)


def mean_(a, axis: int | None = None) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy(),)

    return Node(a.value.mean(axis=axis), (a,), backward)


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Populate ``grad`` on every node reachable from a scalar ``root``.

    Gradients are reset at the start of each call, so repeated calls on one
    graph (e.g. per-document saliency roots) stay independent.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = np.zeros(node.shape, dtype=np.float64)
    root.grad = np.ones(root.shape, dtype=np.float64)
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            parent.grad += g


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function; the test-side oracle."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(x.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = f(x)
        xf[i] = orig - h
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return grad
