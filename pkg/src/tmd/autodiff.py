"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations the losses in this package need are provided. Max-type
reductions send the whole subgradient to the lowest-index maximizer; relu
has derivative 0 at 0 (the 0 branch is the lower index of max(0, x)).
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- basics

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor(
            self.data + other.data,
            _parents=(self, other),
            _backward=lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor(
            x * y,
            _parents=(self, other),
            _backward=lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor(
            x / y,
            _parents=(self, other),
            _backward=lambda g: (
                _unbroadcast(g / y, x.shape),
                _unbroadcast(-g * x / (y * y), y.shape),
            ),
        )

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor(
            x @ y,
            _parents=(self, other),
            _backward=lambda g: (g @ np.swapaxes(y, -1, -2), np.swapaxes(x, -1, -2) @ g),
        )

    # -- shape

    def reshape(self, *shape):
        old = self.shape
        return Tensor(
            self.data.reshape(*shape), _parents=(self,), _backward=lambda g: (g.reshape(old),)
        )

    def __getitem__(self, idx):
        old = self.shape

        def back(g):
            out = np.zeros(old)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], _parents=(self,), _backward=back)

    def expand(self, axis: int):
        return self.reshape(*np.expand_dims(self.data, axis).shape)

    # -- reductions

    def sum(self, axis=None, keepdims=False):
        old = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, old).copy(),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _backward=back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int = -1):
        """Max along one axis; subgradient to the first maximizer."""
        x = self.data
        axis = axis % x.ndim
        idx = np.expand_dims(np.argmax(x, axis=axis), axis)
        out = np.take_along_axis(x, idx, axis=axis).squeeze(axis)

        def back(g):
            full = np.zeros_like(x)
            np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
            return (full,)

        return Tensor(out, _parents=(self,), _backward=back)

    # -- elementwise

    def relu(self):
        mask = self.data > 0
        return Tensor(np.where(mask, self.data, 0.0), _parents=(self,), _backward=lambda g: (g * mask,))

    def exp(self):
        out = np.exp(self.data)
        return Tensor(out, _parents=(self,), _backward=lambda g: (g * out,))

    def log(self):
        x = self.data
        return Tensor(np.log(x), _parents=(self,), _backward=lambda g: (g / x,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor(out, _parents=(self,), _backward=lambda g: (g * 0.5 / out,))

    def softplus(self):
        x = self.data
        out = np.logaddexp(0.0, x)
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        return Tensor(out, _parents=(self,), _backward=lambda g: (g * sig,))

    def clip_max(self, bound: float):
        """min(x, bound); at x == bound the subgradient goes to x."""
        mask = self.data <= bound
        return Tensor(np.minimum(self.data, bound), _parents=(self,), _backward=lambda g: (g * mask,))

    def logsumexp(self, axis: int = -1):
        x = self.data
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
        s = e.sum(axis=axis, keepdims=True)
        out = (m + np.log(s)).squeeze(axis)
        soft = e / s
        return Tensor(out, _parents=(self,), _backward=lambda g: (np.expand_dims(g, axis) * soft,))

    def log_softmax(self, axis: int = -1):
        return self - self.logsumexp(axis=axis).expand(axis)

    def softmax(self, axis: int = -1):
        x = self.data
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        p = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

        return Tensor(p, _parents=(self,), _backward=back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _backward=back,
    )


def grad(fn, params: dict) -> tuple[float, dict]:
    """Evaluate a scalar loss `fn(tensors)` and its gradient w.r.t. each array in `params`."""
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = fn(leaves)
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError(f"non-finite loss {loss.data}")
    loss.backward()
    return loss.item(), {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()
    }
