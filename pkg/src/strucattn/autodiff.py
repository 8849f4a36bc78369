"""Minimal reverse-mode autodiff over float64 numpy arrays.

The model's training path is expressed as a DAG of ``Tensor`` nodes.
Forward values are computed eagerly with the same numpy kernels that
the rest of the package uses (notably ``numkit.softmax_rows``), so the
differentiable forward pass is bit-identical to the plain inference
path.  ``Tensor.backward()`` walks the graph once in reverse
topological order and accumulates gradients into every leaf.

Every backward formula here is covered by a finite-difference test
against ``numkit.finite_diff_grad``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import numkit


class Tensor:
    """A node in the tape: a float64 array plus how to push gradients back."""

    __slots__ = ("value", "grad", "parents", "grad_fn")

    def __init__(self, value, parents=(), grad_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        # grad_fn(out_grad) -> per-parent gradient arrays, aligned with parents
        self.grad_fn: Callable[[np.ndarray], tuple] | None = grad_fn

    @property
    def shape(self):
        return self.value.shape

    def backward(self) -> None:
        """Seed d(self)/d(self) = 1 and accumulate gradients into all ancestors."""
        if self.value.size != 1:
            raise ValueError("backward() expects a scalar loss node")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad_fn is None or node.grad is None:
                continue
            for parent, g in zip(node.parents, node.grad_fn(node.grad)):
                if g is None:
                    continue
                # Gradients are never mutated in place, so aliasing is safe here.
                parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def const(value) -> Tensor:
    """A leaf with no parents (parameters and constants alike)."""
    return Tensor(value)


def add(a: Tensor, b: Tensor) -> Tensor:
    value = a.value + b.value
    return Tensor(
        value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    value = a.value * b.value
    return Tensor(
        value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(x.value * c, (x,), lambda g: (g * c,))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    value = numkit.matmul(a.value, b.value)
    return Tensor(value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(x: Tensor) -> Tensor:
    return Tensor(x.value.T, (x,), lambda g: (g.T,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return Tensor(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = numkit.sigmoid(x.value)
    return Tensor(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return Tensor(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def power(x: Tensor, p: float) -> Tensor:
    """x ** p entrywise; intended for strictly positive x (e.g. sigma ** -2)."""
    p = float(p)
    y = x.value**p
    return Tensor(y, (x,), lambda g: (g * p * x.value ** (p - 1.0),))


def maximum_const(x: Tensor, c: float) -> Tensor:
    """Entrywise floor at c; gradient passes through only where x > c."""
    mask = x.value > c
    return Tensor(np.where(mask, x.value, c), (x,), lambda g: (g * mask,))


def softmax_rows(x: Tensor) -> Tensor:
    y = numkit.softmax_rows(x.value)
    return Tensor(
        y, (x,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),)
    )


def log_softmax_rows(x: Tensor) -> Tensor:
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)
    return Tensor(y, (x,), lambda g: (g - sm * g.sum(axis=1, keepdims=True),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization; gamma and beta are (1, d) leaves."""
    d = x.value.shape[1]
    mu = x.value.mean(axis=1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    value = xhat * gamma.value + beta.value

    def grad_fn(g):
        dxhat = g * gamma.value
        dgamma = (g * xhat).sum(axis=0, keepdims=True)
        dbeta = g.sum(axis=0, keepdims=True)
        row_sum = dxhat.sum(axis=1, keepdims=True)
        row_dot = (dxhat * xhat).sum(axis=1, keepdims=True)
        dx = (inv / d) * (d * dxhat - row_sum - xhat * row_dot)
        return dx, dgamma, dbeta

    return Tensor(value, (x, gamma, beta), grad_fn)


def embed(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds."""
    idx = np.asarray(ids, dtype=np.intp)
    value = table.value[idx]

    def grad_fn(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor(value, (table,), grad_fn)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    widths = [p.value.shape[1] for p in parts]
    value = np.concatenate([p.value for p in parts], axis=1)

    def grad_fn(g):
        out, at = [], 0
        for w in widths:
            out.append(g[:, at : at + w])
            at += w
        return tuple(out)

    return Tensor(value, tuple(parts), grad_fn)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    value = x.value[start:stop]

    def grad_fn(g):
        gx = np.zeros_like(x.value)
        gx[start:stop] = g
        return (gx,)

    return Tensor(value, (x,), grad_fn)


def pick_rows(x: Tensor, col_ids: Sequence[int]) -> Tensor:
    """x[t, col_ids[t]] for each row t, as a (T, 1) tensor."""
    idx = np.asarray(col_ids, dtype=np.intp)
    rows = np.arange(x.value.shape[0])
    value = x.value[rows, idx].reshape(-1, 1)

    def grad_fn(g):
        gx = np.zeros_like(x.value)
        gx[rows, idx] = g[:, 0]
        return (gx,)

    return Tensor(value, (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    shape = x.value.shape
    return Tensor(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
