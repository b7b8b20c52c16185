"""Minimal reverse-mode autodiff over numpy arrays.

Supports exactly the operations the loss functions need: +, -, *, / by
scalar, matmul, tanh, power, slicing, reshape, sum and mean. Gradients
propagate to every Tensor created with requires_grad=True; broadcasting in
elementwise ops is handled by summing the upstream gradient over the
broadcast axes.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ValidationError


def _unbroadcast(grad, shape):
    # reduce grad back to `shape` after numpy broadcasting
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
    """Node in the computation graph; wraps a float64 ndarray."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _wrap(other):
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._wrap(other)
        out = Tensor(self.value + other.value, _parents=(self, other))
        def bwd(g):
            return (_unbroadcast(g, self.value.shape), _unbroadcast(g, other.value.shape))
        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.value, _parents=(self,))
        out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out = Tensor(self.value * other.value, _parents=(self, other))
        def bwd(g):
            return (_unbroadcast(g * other.value, self.value.shape),
                    _unbroadcast(g * self.value, other.value.shape))
        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor) or isinstance(other, np.ndarray):
            raise ValidationError("tensor division only supports scalar divisors")
        return self * (1.0 / float(other))

    def __pow__(self, exponent):
        exponent = float(exponent)
        out = Tensor(self.value ** exponent, _parents=(self,))
        out._backward = lambda g: (g * exponent * self.value ** (exponent - 1.0),)
        return out

    def __matmul__(self, other):
        other = self._wrap(other)
        a, b = self.value, other.value
        if a.ndim != 2 or b.ndim != 2:
            raise ValidationError("matmul requires 2-D operands")
        out = Tensor(a @ b, _parents=(self, other))
        out._backward = lambda g: (g @ b.T, a.T @ g)
        return out

    def __getitem__(self, key):
        out = Tensor(self.value[key], _parents=(self,))
        def bwd(g):
            full = np.zeros_like(self.value)
            np.add.at(full, key, g)
            return (full,)
        out._backward = bwd
        return out

    def reshape(self, *shape):
        out = Tensor(self.value.reshape(*shape), _parents=(self,))
        out._backward = lambda g: (g.reshape(self.value.shape),)
        return out

    def tanh(self):
        t = np.tanh(self.value)
        out = Tensor(t, _parents=(self,))
        out._backward = lambda g: (g * (1.0 - t * t),)
        return out

    def transpose(self):
        if self.value.ndim != 2:
            raise ValidationError("transpose requires a 2-D tensor")
        out = Tensor(self.value.T, _parents=(self,))
        out._backward = lambda g: (g.T,)
        return out

    @property
    def T(self):
        return self.transpose()

    def sum(self):
        out = Tensor(self.value.sum(), _parents=(self,))
        out._backward = lambda g: (np.broadcast_to(g, self.value.shape).copy(),)
        return out

    def mean(self):
        n = self.value.size
        if n == 0:
            raise ValidationError("mean of empty tensor")
        return self.sum() / n

    # -- reverse pass ----------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every requires_grad leaf."""
        if self.value.shape != ():
            raise ValidationError("backward() requires a scalar root")
        order, seen = [], set()
        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)
        visit(self)
        grads = {id(self): np.ones(())}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


def gradient(loss_fn, w):
    """Evaluate loss_fn at w and return (loss value, dloss/dw).

    loss_fn maps a Tensor leaf to a scalar Tensor. Raises NumericalError if
    the loss or gradient is not finite.
    """
    leaf = Tensor(np.array(w, dtype=float), requires_grad=True)
    out = loss_fn(leaf)
    if not isinstance(out, Tensor) or out.value.shape != ():
        raise ValidationError("loss function must return a scalar Tensor")
    if not np.isfinite(out.value):
        raise NumericalError(f"loss is not finite: {out.value!r}")
    out.backward()
    g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
    if not np.all(np.isfinite(g)):
        raise NumericalError("gradient is not finite")
    return float(out.value), g
