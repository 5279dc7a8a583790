"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Just enough surface for the denoiser: elementwise arithmetic with
broadcasting, batched matmul, gather (embedding lookup), softmax, layer
normalization, GeLU, reductions, and a fused masked cross-entropy. Each op
returns a new node carrying a closure that maps the output gradient to
parent gradients; ``backward`` walks the tape in reverse topological order.

Everything is computed in double precision; there is no in-place mutation of
node values, so a tape can be replayed or inspected safely.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """One tape node: a value, its parents, and the local backward rule."""

    __slots__ = ("value", "grad", "parents", "_backward", "needs_grad")

    def __init__(
        self,
        value: Array,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[Array], Sequence[Array | None]] | None = None,
        needs_grad: bool = False,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.parents = tuple(parents)
        self._backward = backward
        self.needs_grad = needs_grad or any(p.needs_grad for p in self.parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def parameter(value: Array) -> Tensor:
    """Trainable leaf."""
    return Tensor(np.array(value, dtype=np.float64), needs_grad=True)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out_val = a.value + b.value

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out_val, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out_val = a.value - b.value

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out_val, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out_val = a.value * b.value

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Tensor(out_val, (a, b), back)


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out_val = a.value / b.value

    def back(g):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value**2), b.shape),
        )

    return Tensor(out_val, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out_val = a.value @ b.value

    def back(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(out_val, (a, b), back)


def power(a, exponent: float) -> Tensor:
    a = constant(a)
    out_val = a.value**exponent

    def back(g):
        return (g * exponent * a.value ** (exponent - 1),)

    return Tensor(out_val, (a,), back)


def exp(a) -> Tensor:
    a = constant(a)
    out_val = np.exp(a.value)

    def back(g):
        return (g * out_val,)

    return Tensor(out_val, (a,), back)


def log(a) -> Tensor:
    a = constant(a)

    def back(g):
        return (g / a.value,)

    return Tensor(np.log(a.value), (a,), back)


def tanh(a) -> Tensor:
    a = constant(a)
    out_val = np.tanh(a.value)

    def back(g):
        return (g * (1.0 - out_val**2),)

    return Tensor(out_val, (a,), back)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """GeLU, tanh approximation."""
    a = constant(a)
    x = a.value
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out_val = 0.5 * x * (1.0 + th)

    def back(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * d_inner),)

    return Tensor(out_val, (a,), back)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    out_val = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        g_arr = np.asarray(g)
        if axis is not None and not keepdims:
            g_arr = np.expand_dims(g_arr, axis)
        return (np.broadcast_to(g_arr, a.shape).copy(),)

    return Tensor(out_val, (a,), back)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    size = a.value.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(size))


def reshape(a, shape) -> Tensor:
    a = constant(a)

    def back(g):
        return (g.reshape(a.shape),)

    return Tensor(a.value.reshape(shape), (a,), back)


def transpose(a, axes) -> Tensor:
    a = constant(a)
    inverse = np.argsort(axes)

    def back(g):
        return (g.transpose(inverse),)

    return Tensor(a.value.transpose(axes), (a,), back)


def gather(table, indices: Array) -> Tensor:
    """Row lookup ``table[indices]``; gradients scatter-add back into the table."""
    table = constant(table)
    idx = np.asarray(indices)
    out_val = table.value[idx]

    def back(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor(out_val, (table,), back)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; additive masks should be applied to the input."""
    a = constant(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_val = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out_val).sum(axis=axis, keepdims=True)
        return ((g - dot) * out_val,)

    return Tensor(out_val, (a,), back)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gain, bias = constant(a), constant(gain), constant(bias)
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out_val = gain.value * xhat + bias.value
    d = x.shape[-1]

    def back(g):
        g_xhat = g * gain.value
        g_var = (g_xhat * centered * -0.5 * inv_std**3).sum(axis=-1, keepdims=True)
        g_mu = (-g_xhat * inv_std).sum(axis=-1, keepdims=True) + g_var * (-2.0 * centered).mean(
            axis=-1, keepdims=True
        )
        g_x = g_xhat * inv_std + g_var * 2.0 * centered / d + g_mu / d
        g_gain = _unbroadcast(g * xhat, gain.shape)
        g_bias = _unbroadcast(g, bias.shape)
        return g_x, g_gain, g_bias

    return Tensor(out_val, (a, gain, bias), back)


def masked_cross_entropy(logits, targets: Array, mask: Array, normalizer: float) -> Tensor:
    """Sum of -log softmax(logits)[target] over masked positions, / normalizer.

    ``logits``: (..., V); ``targets`` integer ids, ``mask`` boolean, both
    shaped like the leading logits dims.
    """
    logits = constant(logits)
    x = logits.value
    shifted = x - x.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
    out_val = -(picked * mask).sum() / normalizer

    def back(g):
        probs = np.exp(log_probs)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        gx = (probs - onehot) * mask[..., None] * (g / normalizer)
        return (gx,)

    return Tensor(np.asarray(out_val), (logits,), back)


def backward(root: Tensor) -> None:
    """Accumulate gradients of ``root`` (a scalar) into every reachable leaf."""
    if root.value.size != 1:
        raise ValueError("backward requires a scalar root")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node.parents, grads):
            if g is None or not p.needs_grad:
                continue
            p.grad = g if p.grad is None else p.grad + g
