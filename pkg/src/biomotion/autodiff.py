"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the toy denoiser and the dynamics predictor need are
provided. Everything runs in float64 so that central finite differences can
be used to check the gradients.
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    # sum out the axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None

    # -- construction helpers -------------------------------------------
    @staticmethod
    def _wrap(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    def _child(self, data, parents, backward):
        needs = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs, _parents=parents if needs else ())
        if needs:
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = Tensor._wrap(other)

        def backward(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return self._child(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        return self._child(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-Tensor._wrap(other))

    def __rsub__(self, other):
        return Tensor._wrap(other) + (-self)

    def __mul__(self, other):
        other = Tensor._wrap(other)

        def backward(g):
            return (_unbroadcast(g * other.data, self.shape),
                    _unbroadcast(g * self.data, other.shape))

        return self._child(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._wrap(other)

        def backward(g):
            return (_unbroadcast(g / other.data, self.shape),
                    _unbroadcast(-g * self.data / other.data ** 2, other.shape))

        return self._child(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor._wrap(other) / self

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("tensor exponents are not supported")

        def backward(g):
            return (g * p * self.data ** (p - 1),)

        return self._child(self.data ** p, (self,), backward)

    def __matmul__(self, other):
        other = Tensor._wrap(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")

        def backward(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return self._child(a @ b, (self, other), backward)

    def __rmatmul__(self, other):
        return Tensor._wrap(other) @ self

    # -- reductions and shape -------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._child(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return self._child(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def swapaxes(self, a1, a2):
        return self._child(np.swapaxes(self.data, a1, a2), (self,),
                           lambda g: (np.swapaxes(g, a1, a2),))

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __getitem__(self, idx):
        shape = self.shape

        def backward(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return self._child(self.data[idx], (self,), backward)

    # -- elementwise nonlinearities -------------------------------------
    def tanh(self):
        y = np.tanh(self.data)
        return self._child(y, (self,), lambda g: (g * (1.0 - y * y),))

    def sigmoid(self):
        y = _sigmoid(self.data)
        return self._child(y, (self,), lambda g: (g * y * (1.0 - y),))

    def silu(self):
        s = _sigmoid(self.data)
        x = self.data
        return self._child(x * s, (self,), lambda g: (g * (s + x * s * (1.0 - s)),))

    def exp(self):
        y = np.exp(self.data)
        return self._child(y, (self,), lambda g: (g * y,))

    def square(self):
        x = self.data
        return self._child(x * x, (self,), lambda g: (2.0 * g * x,))

    # -- backprop ---------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat(tensors, axis=-1):
    tensors = [Tensor._wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    parents = tuple(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in tensors),
                 _parents=parents)
    if out.requires_grad:
        out._backward = lambda g: tuple(np.split(g, splits, axis=axis))
    else:
        out._parents = ()
    return out


def parameter(array):
    return Tensor(np.array(array, dtype=np.float64), requires_grad=True)


def stack(tensors, axis=0):
    tensors = [Tensor._wrap(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in tensors),
                 _parents=tuple(tensors))
    if out.requires_grad:
        n = len(tensors)
        out._backward = lambda g: tuple(np.take(g, i, axis=axis) for i in range(n))
    else:
        out._parents = ()
    return out
