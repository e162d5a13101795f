"""Minimal reverse-mode automatic differentiation over numpy arrays.

Everything is float64. Each op builds a node holding its parents and a
closure that routes the upstream gradient to them; `backward()` walks
the graph once in reverse topological order. Broadcasting follows numpy
rules, with gradients summed back down to the parent shape.

This is deliberately small: the handful of primitives below (matmul,
gather, concat, log-softmax, elementwise) is enough to express the
transformer, the convolutional lip encoder, and their losses, while
keeping every gradient checkable against finite differences.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Backpropagate from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __pow__(self, p):
        return power(self, p)


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def add(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def mul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def matmul(a, b) -> Tensor:
    """np.matmul semantics for stacks of matrices (operands >= 2-D)."""
    a, b = ensure_tensor(a), ensure_tensor(b)
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def power(a, p: float) -> Tensor:
    a = ensure_tensor(a)
    out_data = a.data**p

    def backward(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return Tensor(out_data, parents=(a,), backward=backward)


def exp(a) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return Tensor(out_data, parents=(a,), backward=backward)


def log(a) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return Tensor(out_data, parents=(a,), backward=backward)


def tanh(a) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return Tensor(out_data, parents=(a,), backward=backward)


def relu(a) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        _accumulate(a, g * (a.data > 0.0))

    return Tensor(out_data, parents=(a,), backward=backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_K = 0.044715


def gelu(a) -> Tensor:
    """tanh-approximation GELU as a fused primitive; smooth everywhere,
    which keeps finite-difference gradient checks clean."""
    a = ensure_tensor(a)
    x = a.data
    x2 = x * x
    th = np.tanh(_GELU_C * (x + _GELU_K * x2 * x))
    out_data = 0.5 * x * (1.0 + th)

    def backward(g):
        sech2 = 1.0 - th * th
        grad = 0.5 * (1.0 + th) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_K * x2)
        _accumulate(a, g * grad)

    return Tensor(out_data, parents=(a,), backward=backward)


def reshape(a, shape) -> Tensor:
    a = ensure_tensor(a)
    in_shape = a.data.shape
    out_data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(in_shape))

    return Tensor(out_data, parents=(a,), backward=backward)


def transpose(a, axes) -> Tensor:
    a = ensure_tensor(a)
    inverse = tuple(np.argsort(axes))
    out_data = np.transpose(a.data, axes)

    def backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return Tensor(out_data, parents=(a,), backward=backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return Tensor(out_data, parents=tuple(tensors), backward=backward)


def index(a, key) -> Tensor:
    """Basic (slice/int) indexing."""
    a = ensure_tensor(a)
    out_data = a.data[key]

    def backward(g):
        gp = np.zeros_like(a.data)
        gp[key] += g
        _accumulate(a, gp)

    return Tensor(out_data, parents=(a,), backward=backward)


def take_axis(a, idx: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along one axis with an integer index array (repeats allowed)."""
    a = ensure_tensor(a)
    idx = np.asarray(idx)
    out_data = np.take(a.data, idx, axis=axis)

    def backward(g):
        gp = np.zeros_like(a.data)
        key = (slice(None),) * axis + (idx,)
        np.add.at(gp, key, g)
        _accumulate(a, gp)

    return Tensor(out_data, parents=(a,), backward=backward)


def take_flat(a, flat_idx: np.ndarray) -> Tensor:
    """Gather from the flattened array; the workhorse behind im2col."""
    a = ensure_tensor(a)
    out_data = a.data.reshape(-1)[flat_idx]

    def backward(g):
        # bincount is a far faster scatter-add than np.add.at
        gp = np.bincount(flat_idx.reshape(-1), weights=g.reshape(-1), minlength=a.data.size)
        _accumulate(a, gp.reshape(a.data.shape))

    return Tensor(out_data, parents=(a,), backward=backward)


def pad_const(a, pad_width) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.pad(a.data, pad_width)

    def backward(g):
        sl = tuple(slice(lo, g.shape[i] - hi) for i, (lo, hi) in enumerate(pad_width))
        _accumulate(a, g[sl])

    return Tensor(out_data, parents=(a,), backward=backward)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(x % a.data.ndim for x in axes):
                g = np.expand_dims(g, ax)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return Tensor(out_data, parents=(a,), backward=backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = ensure_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(g):
        soft = np.exp(out_data)
        _accumulate(a, g - soft * g.sum(axis=axis, keepdims=True))

    return Tensor(out_data, parents=(a,), backward=backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = ensure_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - dot))

    return Tensor(out_data, parents=(a,), backward=backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift (fused)."""
    x, gain, bias = ensure_tensor(x), ensure_tensor(gain), ensure_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(gain, (g * xhat).sum(axis=axes))
        if bias.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(bias, g.sum(axis=axes))
        if x.requires_grad:
            gy = g * gain.data
            dot1 = gy.mean(axis=-1, keepdims=True)
            dot2 = (gy * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gy - dot1 - xhat * dot2))

    return Tensor(out_data, parents=(x, gain, bias), backward=backward)


def linear(x, w, b=None) -> Tensor:
    """x @ w (+ b); w is (in, out)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = ensure_tensor(t)
        shape = list(t.data.shape)
        shape.insert(axis, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)
