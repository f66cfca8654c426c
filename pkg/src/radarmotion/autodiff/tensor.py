"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records a closure that maps the output gradient onto its
inputs. ``Tensor.backward`` walks the recorded graph in reverse topological
order. All primitives reject non-finite results.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NumericalError(ArithmeticError):
    """A primitive produced NaN or Inf."""


class ShapeError(ValueError):
    pass


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    # a single reduction is much cheaper than an elementwise mask; only an
    # overflowing sum needs the exact check
    if not np.isfinite(np.sum(arr)) and not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite value produced by {op}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array with an optional gradient and graph history."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- construction helpers --------------------------------------------
    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"], op: str) -> "Tensor":
        out = Tensor(_check_finite(data, op))
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        # leaves (no parents) receive their gradients in _accumulate above

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    out = Tensor._result(data, parents, op)
    if out.requires_grad:
        out._backward = backward
    return out


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), "add",
                 lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b), "sub",
                 lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b), "mul",
                 lambda g: ((a, _unbroadcast(g * b.data, a.shape)),
                            (b, _unbroadcast(g * a.data, b.shape))))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _node(out, (a, b), "div",
                 lambda g: ((a, _unbroadcast(g / b.data, a.shape)),
                            (b, _unbroadcast(-g * out / b.data, b.shape))))


def power(a: Tensor, p: float) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = a.data ** p
    return _node(out, (a,), "power", lambda g: ((a, g * p * a.data ** (p - 1)),))


def film(h, alpha, beta) -> Tensor:
    """Feature-wise linear modulation ``h * alpha + beta`` with broadcasting."""
    h, alpha, beta = as_tensor(h), as_tensor(alpha), as_tensor(beta)
    try:
        np.broadcast_shapes(h.shape, alpha.shape, beta.shape)
    except ValueError as exc:
        raise ShapeError(f"film: cannot broadcast {alpha.shape}/{beta.shape} to {h.shape}") from exc
    return add(mul(h, alpha), beta)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), "relu", lambda g: ((x, g * mask),))


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))
    return _node(x.data * s, (x,), "silu", lambda g: ((x, g * (s + x.data * s * (1 - s))),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _node(t, (x,), "tanh", lambda g: ((x, g * (1 - t * t)),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _node(e, (x,), "exp", lambda g: ((x, g * e),))


# -- reductions and shape ---------------------------------------------------
def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), "sum",
                 lambda g: ((x, _expand(g, x.shape, axis, keepdims)),))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    n = x.data.size / out.size
    return _node(out, (x,), "mean",
                 lambda g: ((x, _expand(g, x.shape, axis, keepdims) / n),))


def tmax(x: Tensor, axis: int) -> Tensor:
    """Max-pool along ``axis``; the gradient goes to the first maximum."""
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return ((x, gx),)

    return _node(out, (x,), "max", backward)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _node(out, (x,), "reshape", lambda g: ((x, g.reshape(x.shape)),))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,), "transpose",
                 lambda g: ((x, np.transpose(g, inv)),))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(i is None or i is Ellipsis or isinstance(i, (int, np.integer, slice)) for i in items)


def getitem(x: Tensor, index) -> Tensor:
    basic = _is_basic(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:  # basic indexing never repeats an element
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return ((x, gx),)

    return _node(x.data[index], (x,), "getitem", backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(zip(tensors, np.split(g, sizes, axis=axis)))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward)


# -- linear algebra ---------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching semantics (``a @ b``)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if b.ndim == 2:
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ((a, ga), (b, gb))

    return _node(out, (a, b), "matmul", backward)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape ``(..., d_in)`` and a 2-D ``w``, as one GEMM."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out += b.data
        parents = (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        grads = [(x, (g2 @ w.data.T).reshape(x.shape)), (w, x2.T @ g2)]
        if b is not None:
            grads.append((b, g2.sum(axis=0)))
        return grads

    return _node(out.reshape(*lead, w.shape[1]), parents, "linear", backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)
    return _node(y, (x,), "softmax",
                 lambda g: ((x, y * (g - np.sum(g * y, axis=axis, keepdims=True))),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis then apply ``gain`` and ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        flat = g.reshape(-1, d)
        return ((x, dx), (gain, (flat * xhat.reshape(-1, d)).sum(axis=0)), (bias, flat.sum(axis=0)))

    return _node(out, (x, gain, bias), "layer_norm", backward)


def sum_squares(a, b=None) -> Tensor:
    """``sum((a - b)**2)``; the usual squared-error loss."""
    d = as_tensor(a) if b is None else sub(a, b)
    return tsum(mul(d, d))

