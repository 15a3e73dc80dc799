"""Dense float64 tensors with a dynamic reverse-mode tape.

Design notes, because they are load-bearing:

* Storage is always a float64 ndarray. No other dtype exists on purpose:
  the gradient checks in this repo chase 1e-10 agreement and f32 would
  drown that in rounding noise.

* The tape is dynamic. Executing an op records a node with a uid drawn
  from a monotonically increasing counter; ``backward`` walks the nodes
  reachable from the loss in reverse uid order, which is exactly reverse
  execution order. Gradients from fan-out accumulate additively.

* Only three broadcast forms are legal in binary ops: identical shapes,
  one operand scalar, or the smaller operand matching a trailing suffix
  of the larger (bias-style). Anything fancier raises ContractError so a
  silent numpy broadcast can never smuggle in a wrong gradient.

* Fused ops elsewhere in the package create nodes through ``apply``;
  their backward closures receive the output gradient and push
  contributions into parents with ``accumulate`` / ``accumulate_owned``.
  The owned variant takes the buffer as-is and must only be used for
  freshly allocated arrays nobody else aliases.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError
from .instrument import (
    madds_elementwise,
    madds_matmul,
    meter,
)

_M = meter()

_grad_enabled = True


@contextmanager
def no_grad():
    """Suppress tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


_uid = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "uid", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.uid = next(_uid)
        self._parents = ()
        self._backward = None
        _M.track(arr)

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The raw buffer. Callers must not mutate it."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        head = np.array2string(self.data, precision=4, threshold=6)
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}, data={head})"

    # -- autodiff --------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor with no grad path")
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if t.uid in seen:
                continue
            seen.add(t.uid)
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t.uid, reverse=True)
        self.grad = np.ones_like(self.data)
        for t in nodes:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def apply(out_data: np.ndarray, parents: Sequence[Tensor], backward_fn, owns: bool = True) -> Tensor:
    """Record a node for a fused op.

    ``backward_fn(grad_out)`` must push gradients into the parents via
    ``accumulate``/``accumulate_owned``. Pass ``owns=False`` when
    ``out_data`` is a view into an existing buffer so the memory meter
    does not double count.
    """
    t = Tensor.__new__(Tensor)
    t.data = out_data
    t.grad = None
    t.uid = next(_uid)
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward_fn
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    if owns:
        _M.track(out_data)
    return t


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution; copies on first write, g may be aliased."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def accumulate_owned(t: Tensor, g: np.ndarray) -> None:
    """Like accumulate, but takes ownership of a freshly allocated g."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _wrap(v) -> Tensor:
    if isinstance(v, Tensor):
        return v
    return Tensor(np.asarray(v, dtype=np.float64))


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    if a.size == 1 or b.size == 1:
        return
    small, big = (a, b) if a.ndim <= b.ndim else (b, a)
    if small.shape == big.shape[big.ndim - small.ndim:]:
        return
    raise ContractError(
        f"broadcast limited to equal/scalar/trailing shapes, got {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (undo scalar or trailing broadcast)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    # remaining size-1 axes that were stretched
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data)
    out = a.data + b.data
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += 2 * madds_elementwise(g.size)
        accumulate(a, _reduce_to(g, a.data.shape))
        accumulate(b, _reduce_to(g, b.data.shape))

    return apply(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data)
    out = a.data - b.data
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += 2 * madds_elementwise(g.size)
        accumulate(a, _reduce_to(g, a.data.shape))
        accumulate_owned(b, _reduce_to(-g, b.data.shape))

    return apply(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data)
    out = a.data * b.data
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += 2 * madds_elementwise(g.size)
        accumulate_owned(a, _reduce_to(g * b.data, a.data.shape))
        accumulate_owned(b, _reduce_to(g * a.data, b.data.shape))

    return apply(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data)
    out = a.data / b.data
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += 3 * madds_elementwise(g.size)
        accumulate_owned(a, _reduce_to(g / b.data, a.data.shape))
        accumulate_owned(b, _reduce_to(-g * out / b.data, b.data.shape))

    return apply(out, (a, b), bw)


def neg(a) -> Tensor:
    a = _wrap(a)
    out = -a.data
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += madds_elementwise(g.size)
        accumulate_owned(a, -g)

    return apply(out, (a,), bw)


# -- elementwise unary -------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += madds_elementwise(g.size)
        accumulate_owned(a, g * out)

    return apply(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    if np.min(a.data) <= 0.0:
        raise DomainError("log expects strictly positive input")
    out = np.log(a.data)
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += madds_elementwise(g.size)
        accumulate_owned(a, g / a.data)

    return apply(out, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    if np.min(a.data) < 0.0:
        raise DomainError("sqrt expects nonnegative input")
    out = np.sqrt(a.data)
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += madds_elementwise(g.size)
        accumulate_owned(a, g / (2.0 * out))

    return apply(out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    # numerically stable split by sign
    out = _sigmoid_raw(a.data)
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += madds_elementwise(g.size)
        accumulate_owned(a, g * out * (1.0 - out))

    return apply(out, (a,), bw)


def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; the two branches share it
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid_raw(a.data)
    out = a.data * s
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += madds_elementwise(g.size)
        accumulate_owned(a, g * (s + out * (1.0 - s)))

    return apply(out, (a,), bw)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    out = np.logaddexp(0.0, a.data)
    _M.madds += madds_elementwise(out.size)

    def bw(g):
        _M.madds += madds_elementwise(g.size)
        accumulate_owned(a, g * _sigmoid_raw(a.data))

    return apply(out, (a,), bw)


# -- matmul ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.

    Supported forms: (m,k)@(k,n); (...,k)@(k,n) flattening the leading
    axes; (b,m,k)@(b,k,n) batched. Everything else is a contract error.
    """
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    if ad.ndim >= 2 and bd.ndim == 2:
        if ad.shape[-1] != bd.shape[0]:
            raise ContractError(f"matmul inner dims: {ad.shape} @ {bd.shape}")
        m = ad.size // ad.shape[-1]
        k, n = bd.shape
        out = ad.reshape(m, k) @ bd
        _M.madds += madds_matmul(m, k, n)
        out = out.reshape(ad.shape[:-1] + (n,))

        def bw(g):
            g2 = g.reshape(m, n)
            _M.madds += madds_matmul(m, n, k) + madds_matmul(k, m, n)
            accumulate_owned(a, (g2 @ bd.T).reshape(ad.shape))
            accumulate_owned(b, ad.reshape(m, k).T @ g2)

        return apply(out, (a, b), bw)

    if ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ContractError(f"batched matmul dims: {ad.shape} @ {bd.shape}")
        B, m, k = ad.shape
        n = bd.shape[2]
        out = np.matmul(ad, bd)
        _M.madds += madds_matmul(m, k, n, batch=B)

        def bw(g):
            _M.madds += madds_matmul(m, n, k, batch=B) + madds_matmul(k, m, n, batch=B)
            accumulate_owned(a, np.matmul(g, bd.transpose(0, 2, 1)))
            accumulate_owned(b, np.matmul(ad.transpose(0, 2, 1), g))

        return apply(out, (a, b), bw)

    raise ContractError(f"unsupported matmul ranks: {ad.shape} @ {bd.shape}")


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)
    _M.madds += madds_elementwise(a.data.size)

    def bw(g):
        _M.madds += madds_elementwise(a.data.size)
        if axis is None:
            accumulate_owned(a, np.full(a.data.shape, float(g.reshape(())), dtype=np.float64))
        else:
            gk = g if keepdims else np.expand_dims(g, axis)
            accumulate(a, np.broadcast_to(gk, a.data.shape))

    return apply(out, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, int):
        n = a.data.shape[axis]
    else:
        n = 1
        for ax in axis:
            n *= a.data.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bw(g):
        accumulate(a, g.reshape(a.data.shape))

    return apply(out, (a,), bw, owns=False)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def bw(g):
        accumulate(a, np.transpose(g, inv))

    return apply(out, (a,), bw, owns=False)


def flip(a: Tensor, axis: int) -> Tensor:
    out = np.flip(a.data, axis=axis)

    def bw(g):
        accumulate(a, np.flip(g, axis=axis))

    return apply(out, (a,), bw, owns=False)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ContractError("concat of zero tensors")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            accumulate(p, g[tuple(sl)])

    return apply(out, tuple(parts), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.data.shape[axis]:
        raise ContractError(
            f"narrow [{start}:{start + length}) out of bounds for axis {axis} of {a.data.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    out = a.data[tuple(sl)]

    def bw(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[tuple(sl)] += g

    return apply(out, (a,), bw, owns=False)


def take_rows(a: Tensor, idx: np.ndarray, permutation: bool = False) -> Tensor:
    """Gather rows along axis 0. With permutation=True the index must be a
    bijection on range(len) and the backward scatter skips the slow
    duplicate-safe path."""
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise ContractError("take_rows index must be integral")
    out = a.data[idx]

    def bw(g):
        if permutation:
            dx = np.empty_like(a.data)
            dx[idx] = g
            accumulate_owned(a, dx)
        else:
            dx = np.zeros_like(a.data)
            np.add.at(dx, idx, g)
            accumulate_owned(a, dx)

    return apply(out, (a,), bw)
