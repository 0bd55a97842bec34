"""Dense float64 tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation records
its parents and a closure mapping the output gradient to one gradient per
parent; :meth:`Tensor.backward` walks that graph in reverse topological order
and accumulates into ``.grad`` of every leaf with ``requires_grad``.

Binary operations only broadcast by leading-dimension repetition: the shapes
must be equal or one must be a trailing suffix of the other. Anything else
(including size-1 axes) is a :class:`ShapeMismatch`; use :func:`expand` to
repeat along an inner axis explicitly.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import GraphCycle, NonFinite, ShapeMismatch

_state = threading.local()

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeMismatch(f"dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFinite(f"non-finite values in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- construction helpers -------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        if not np.isfinite(data).all():
            raise NonFinite(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    # -- differentiation ------------------------------------------------
    def backward(self) -> None:
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b:
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise ShapeMismatch(f"{op}: shapes {a} and {b} differ beyond leading-dim repetition")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.reshape((-1,) + tuple(shape)).sum(axis=0)
    return g


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.shape, b.shape, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.shape, b.shape, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return Tensor._result(ad * bd, (a, b), bw, "mul")


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = _wrap(a)
    x = a.data
    th = np.tanh(GELU_C * (x + GELU_K * (x * x * x)))
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        dth = (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * dth),)

    return Tensor._result(out, (a,), bw, "gelu")


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _wrap(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (a,), bw, "softmax")


def layernorm(a, gain=None, bias=None, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis (population variance), then ``* gain + bias``."""
    a = _wrap(a)
    d = a.shape[-1]
    parents = [a]
    for p in (gain, bias):
        if p is not None:
            if p.shape != (d,):
                raise ShapeMismatch(f"layernorm: affine shape {p.shape} != ({d},)")
            parents.append(p)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g * gain.data if gain is not None else g
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append((g * xhat).reshape(-1, d).sum(axis=0))
        if bias is not None:
            grads.append(g.reshape(-1, d).sum(axis=0))
        return tuple(grads)

    return Tensor._result(out, parents, bw, "layernorm")


# -- linear algebra -------------------------------------------------------
def matmul(a, b) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` or ``a[..., m, k] @ b[..., k, n]`` (same leading dims)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul: batch dims {a.shape[:-2]} != {b.shape[:-2]}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor._result(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


# -- shape manipulation ---------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def expand(a, axis: int, size: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``a`` ``size`` times along it."""
    a = _wrap(a)
    data = np.repeat(np.expand_dims(a.data, axis), size, axis=axis)
    return Tensor._result(data, (a,), lambda g: (g.sum(axis=axis),), "expand")


def getitem(a, idx) -> Tensor:
    a = _wrap(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return (full,)

    return Tensor._result(np.array(a.data[idx]), (a,), bw, "getitem")


def total(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    return Tensor._result(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    n = a.data.size
    return Tensor._result(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean")


# -- graph traversal ------------------------------------------------------
def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every node after its inputs."""
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise GraphCycle("cycle detected in compute graph")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            pm = state.get(id(p))
            if pm == 1:
                raise GraphCycle("cycle detected in compute graph")
            if pm is None and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
               floor: float = 1e-5) -> float:
    """Max coordinate-wise relative error of analytic vs central-difference gradients.

    ``f`` re-evaluates the scalar objective from the current parameter values.
    Denominators are floored at ``floor`` so vanishing gradients are judged by
    absolute error.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    for p in params:
        p.grad = None
    backward(f())
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = f().item()
            flat[i] = orig - h
            with no_grad():
                fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
