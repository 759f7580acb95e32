"""Reverse-mode differentiation on a recording tape.

Operations executed inside ``with Tape() as tape:`` are appended to the tape in
execution order, which is already a topological order, so ``backward`` simply
walks the record in reverse.  Outside a tape the same functions only compute
values, which keeps inference cheap.

Backward rules live in the ``RULES`` registry keyed by primitive name.  Each
rule receives the upstream gradient, the saved context and a tuple of flags
saying which parents need a gradient, and returns one array (or ``None``) per
parent.
"""

from __future__ import annotations

import threading
from typing import Mapping, Callable, Iterable, Sequence

import numpy as np

_local = threading.local()


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "requires_grad", "name", "_node")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._node = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("op", "out", "parents", "ctx")

    def __init__(self, op, out, parents, ctx):
        self.op = op
        self.out = out
        self.parents = parents
        self.ctx = ctx


class Tape:
    """Records primitive applications; use as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def gradient(self, loss: Tensor, params):
        """Gradients of ``loss`` for a sequence of tensors (list out) or a name mapping (dict out)."""
        grads = backward(self, loss)
        if isinstance(params, Mapping):
            return {k: grads.get(id(p), np.zeros_like(p.value)) for k, p in params.items()}
        return [grads.get(id(p), np.zeros_like(p.value)) for p in params]


def active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


RULES: dict[str, Callable] = {}


def rule(name: str):
    def deco(fn):
        RULES[name] = fn
        return fn

    return deco


def _apply(op: str, value: np.ndarray, parents: tuple[Tensor, ...], ctx=None) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{op} produced non-finite values")
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=needs)
    if needs:
        node = _Node(op, out, parents, ctx)
        out._node = node
        tape.nodes.append(node)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse accumulation from scalar ``loss``; returns ``{id(tensor): grad}``."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.out)) if node.out is loss else grads.pop(id(node.out), None)
        if g is None:
            continue
        flags = tuple(p.requires_grad for p in node.parents)
        pgrads = RULES[node.op](g, node.ctx, flags)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _apply("add", a.value + b.value, (a, b), (a.shape, b.shape))


@rule("add")
def _add_backward(g, ctx, flags):
    sa, sb = ctx
    return (_unbroadcast(g, sa) if flags[0] else None, _unbroadcast(g, sb) if flags[1] else None)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _apply("sub", a.value - b.value, (a, b), (a.shape, b.shape))


@rule("sub")
def _sub_backward(g, ctx, flags):
    sa, sb = ctx
    return (_unbroadcast(g, sa) if flags[0] else None, -_unbroadcast(g, sb) if flags[1] else None)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _apply("mul", a.value * b.value, (a, b), (a.value, b.value))


@rule("mul")
def _mul_backward(g, ctx, flags):
    av, bv = ctx
    return (
        _unbroadcast(g * bv, av.shape) if flags[0] else None,
        _unbroadcast(g * av, bv.shape) if flags[1] else None,
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _apply("scale", a.value * c, (a,), c)


@rule("scale")
def _scale_backward(g, c, flags):
    return (g * c,)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading axes.

    A 2-D right operand (a weight matrix) is applied by flattening the left
    operand to one big 2-D product.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.value.ndim == 2:
        a2 = a.value.reshape(-1, a.shape[-1])
        out = (a2 @ b.value).reshape(a.shape[:-1] + (b.shape[-1],))
        return _apply("matmul_w", out, (a, b), (a2, b.value, a.shape))
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    return _apply("matmul", out, (a, b), (a.value, b.value))


@rule("matmul_w")
def _matmul_w_backward(g, ctx, flags):
    a2, w, ashape = ctx
    g2 = g.reshape(-1, w.shape[1])
    ga = (g2 @ w.T).reshape(ashape) if flags[0] else None
    gw = a2.T @ g2 if flags[1] else None
    return ga, gw


@rule("matmul")
def _matmul_backward(g, ctx, flags):
    av, bv = ctx
    ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape) if flags[0] else None
    gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape) if flags[1] else None
    return ga, gb


# -- shape manipulation ---------------------------------------------------------


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in ts)) from None
    sizes = [t.shape[axis] for t in ts]
    return _apply("concat", out, ts, (axis, np.cumsum(sizes)[:-1]))


@rule("concat")
def _concat_backward(g, ctx, flags):
    axis, splits = ctx
    parts = np.split(g, splits, axis=axis)
    return tuple(p if f else None for p, f in zip(parts, flags))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _apply("reshape", out, (a,), a.shape)


@rule("reshape")
def _reshape_backward(g, shape, flags):
    return (g.reshape(shape),)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    return _apply("transpose", np.transpose(a.value, axes), (a,), tuple(axes))


@rule("transpose")
def _transpose_backward(g, axes, flags):
    return (np.transpose(g, np.argsort(axes)),)


def take(a, index) -> Tensor:
    """Gather rows of ``a`` along axis 0; ``index`` may have any shape."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < -a.shape[0] or index.max() >= a.shape[0]):
        raise IndexError(f"take: index out of range for axis of length {a.shape[0]}")
    return _apply("take", a.value[index], (a,), (index, a.shape))


@rule("take")
def _take_backward(g, ctx, flags):
    index, shape = ctx
    flat = index.reshape(-1) % shape[0]
    onehot = np.zeros((shape[0], flat.size))
    onehot[flat, np.arange(flat.size)] = 1.0
    return ((onehot @ g.reshape(flat.size, -1)).reshape(shape),)


# -- nonlinearities -------------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _apply("relu", np.maximum(a.value, 0.0), (a,), a.value > 0)


@rule("relu")
def _relu_backward(g, mask, flags):
    return (g * mask,)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return _apply("tanh", y, (a,), y)


@rule("tanh")
def _tanh_backward(g, y, flags):
    return (g * (1.0 - y * y),)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance."""
    a = as_tensor(a)
    mu = a.value.mean(axis=-1, keepdims=True)
    xc = a.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return _apply("layer_norm", xhat, (a,), (xhat, inv))


@rule("layer_norm")
def _layer_norm_backward(g, ctx, flags):
    xhat, inv = ctx
    gm = g.mean(axis=-1, keepdims=True)
    gxm = (g * xhat).mean(axis=-1, keepdims=True)
    return (inv * (g - gm - xhat * gxm),)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _apply("softmax", s, (a,), (s, axis))


@rule("softmax")
def _softmax_backward(g, ctx, flags):
    s, axis = ctx
    return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)


# -- reductions -----------------------------------------------------------------


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _apply("mean", a.value.mean(axis=axis, keepdims=keepdims), (a,), (a.shape, axis, keepdims))


@rule("mean")
def _mean_backward(g, ctx, flags):
    shape, axis, keepdims = ctx
    if axis is None:
        return (np.full(shape, g.item() / np.prod(shape, dtype=np.float64)),)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    n = np.prod([shape[ax] for ax in axes], dtype=np.float64)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return (np.broadcast_to(g / n, shape).copy(),)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    return _apply("sum", a.value.sum(axis=axis, keepdims=keepdims), (a,), (a.shape, axis, keepdims))


@rule("sum")
def _sum_backward(g, ctx, flags):
    shape, axis, keepdims = ctx
    if axis is None:
        return (np.full(shape, g.item()),)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return (np.broadcast_to(g, shape).copy(),)


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements; ``target`` is treated as data."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.value - target.value
    return _apply("mse", np.asarray(np.mean(diff * diff)), (pred, target), diff)


@rule("mse")
def _mse_backward(g, diff, flags):
    d = g * 2.0 * diff / diff.size
    return (d if flags[0] else None, -d if flags[1] else None)
