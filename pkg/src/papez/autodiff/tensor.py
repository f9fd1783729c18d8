"""Dense tensors with reverse-mode differentiation, backed by numpy.

Every forward op returns a new :class:`Tensor`; when any input requires a
gradient the op also records its parents and a closure mapping the output
gradient to input gradients.  :func:`backward` walks the recorded graph in a
fixed topological order, so gradient accumulation is deterministic.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_dtype = np.float32
_grad_enabled = True

NORM_EPS = 1e-5


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


def get_precision() -> str:
    return "f64" if _dtype is np.float64 else "f32"


def default_dtype():
    return _dtype


def set_precision(mode: str) -> None:
    global _dtype
    if mode not in _PRECISIONS:
        raise ValueError(f"unknown precision {mode!r}; expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[mode]


@contextlib.contextmanager
def precision(mode: str):
    previous = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _dtype)
        if not np.isfinite(self.data).all():
            raise NonFiniteError("tensor created from non-finite data")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"

    # -- properties -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operators -------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

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

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self):
        return backward(self)


class Parameter(Tensor):
    """A trainable leaf tensor; ``name`` is filled in by the owning module."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True)
        self.name = name


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    data = np.asarray(data)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward_fn if needs else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- reverse pass -------------------------------------------------------------

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        if i == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if i < len(node._parents):
            stack.append((node, i + 1))
            parent = node._parents[i]
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, 0))
        else:
            order.append(node)
    return order


def backward(loss: Tensor) -> dict[str, Tensor]:
    """Back-propagate from a scalar ``loss``.

    Leaf tensors that require gradients get ``.grad`` overwritten with a
    fresh ndarray.  Returns the gradients of named leaves (normally the
    model's parameters) keyed by name.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    named: dict[str, Tensor] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = np.array(g)
            if node.name is not None:
                named[node.name] = Tensor(g, dtype=g.dtype)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return named


# -- elementwise arithmetic ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = a.data ** exponent
    return _result(out, (a,), bw, "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(-np.logaddexp(0.0, -a.data)).astype(a.dtype, copy=False)
    return _result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * pos,), "relu")


def prelu(a, slope) -> Tensor:
    """``max(0, x) + slope * min(0, x)``; ``slope`` broadcasts against ``x``."""
    a, slope = as_tensor(a), as_tensor(slope)
    pos = a.data > 0
    out = np.where(pos, a.data, slope.data * a.data)

    def bw(g):
        ga = np.where(pos, g, g * slope.data)
        gs = _unbroadcast(np.where(pos, 0, g * a.data), slope.shape)
        return ga, gs

    return _result(out, (a, slope), bw, "prelu")


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where the (constant) boolean ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        return (_unbroadcast(np.where(cond, g, 0), a.shape),
                _unbroadcast(np.where(cond, 0, g), b.shape))

    return _result(out, (a, b), bw, "where")


# -- reductions and shape ops -------------------------------------------------

def _expand_reduced(g: np.ndarray, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (_expand_reduced(g, a.shape, axis, keepdims).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)

    def bw(g):
        return (_expand_reduced(g, a.shape, axis, keepdims) / count,)

    return _result(out, (a,), bw, "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    out = a.data[index]
    return _result(np.array(out) if basic else out, (a,), bw, "getitem")


def take(a, indices) -> Tensor:
    """Rows of ``a`` at integer ``indices`` (axis 0)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        return (full,)

    return _result(a.data[indices], (a,), bw, "take")


def put_rows(base, indices, values) -> Tensor:
    """Copy of ``base`` with rows ``indices`` replaced by ``values``.

    Rows not listed are carried over bit-for-bit.  Indices must be unique.
    """
    base, values = as_tensor(base), as_tensor(values)
    indices = np.asarray(indices, dtype=np.intp)
    if np.unique(indices).size != indices.size:
        raise ValueError("put_rows indices must be unique")
    out = base.data.copy()
    out[indices] = values.data

    def bw(g):
        gb = g.copy()
        gb[indices] = 0
        return gb, g[indices]

    return _result(out, (base, values), bw, "put_rows")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def split(a, sizes: Iterable[int], axis: int = -1) -> list[Tensor]:
    a = as_tensor(a)
    sizes = list(sizes)
    if sum(sizes) != a.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not cover axis of length {a.shape[axis]}")
    pieces, start = [], 0
    for size in sizes:
        index = [slice(None)] * a.ndim
        index[axis] = slice(start, start + size)
        pieces.append(getitem(a, tuple(index)))
        start += size
    return pieces


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes must agree or broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data @ b.data
    return _result(out, (a, b), bw, "matmul")


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get exactly zero weight."""
    a = as_tensor(a)
    z = a.data if mask is None else np.where(mask, a.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), bw, "softmax")


def _normalize_last(x: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv


def _normalize_backward(gxhat: np.ndarray, xhat: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                  - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))


def layer_norm(x, gamma, beta, eps: float = NORM_EPS) -> Tensor:
    """Normalize each token over its last axis, then apply ``gamma``/``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.shape[-1] < 1:
        raise ValueError("layer_norm needs a non-empty feature axis")
    xhat, inv = _normalize_last(x.data, eps)

    def bw(g):
        gxhat = g * gamma.data
        return (_normalize_backward(gxhat, xhat, inv),
                _unbroadcast(g * xhat, gamma.shape),
                _unbroadcast(g, beta.shape))

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


def instance_norm(x, eps: float = NORM_EPS) -> Tensor:
    """Per-channel normalization over the length axis of a ``C x L`` input."""
    x = as_tensor(x)
    xhat, inv = _normalize_last(x.data, eps)
    return _result(xhat, (x,), lambda g: (_normalize_backward(g, xhat, inv),), "instance_norm")


def conv1d(x, w, b=None, stride: int = 1) -> Tensor:
    """Valid (unpadded) 1-D convolution.

    ``x`` is ``C_in x L``, ``w`` is ``C_out x C_in x k``; the output has
    ``floor((L - k) / stride) + 1`` frames.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 3 or w.shape[1] != x.shape[0]:
        raise ValueError(f"conv1d shape mismatch: x {x.shape}, w {w.shape}")
    k = w.shape[2]
    length = x.shape[1]
    if length < k:
        raise ValueError(f"conv1d input length {length} shorter than kernel {k}")
    frames = (length - k) // stride + 1
    windows = sliding_window_view(x.data, k, axis=1)[:, ::stride, :]
    out = np.tensordot(w.data, windows, axes=([1, 2], [0, 2]))
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None]
        parents.append(b)

    def bw(g):
        gw = np.tensordot(g, windows, axes=([1], [1]))
        gx = np.zeros_like(x.data)
        span = stride * (frames - 1) + 1
        for j in range(k):
            gx[:, j:j + span:stride] += w.data[:, :, j].T @ g
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=1))
        return grads

    return _result(out, parents, bw, "conv1d")


def conv_transpose1d(x, w, b=None, stride: int = 1) -> Tensor:
    """Adjoint of :func:`conv1d`.

    ``x`` is ``C_in x F``, ``w`` is ``C_in x C_out x k``; output length is
    ``(F - 1) * stride + k``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 3 or w.shape[0] != x.shape[0]:
        raise ValueError(f"conv_transpose1d shape mismatch: x {x.shape}, w {w.shape}")
    frames = x.shape[1]
    if frames == 0:
        raise ValueError("conv_transpose1d got an empty input")
    k = w.shape[2]
    length = (frames - 1) * stride + k
    span = stride * (frames - 1) + 1
    out = np.zeros((w.shape[1], length), dtype=np.result_type(x.data, w.data))
    for j in range(k):
        out[:, j:j + span:stride] += w.data[:, :, j].T @ x.data
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None]
        parents.append(b)

    def bw(g):
        windows = sliding_window_view(g, k, axis=1)[:, ::stride, :]
        gx = np.tensordot(w.data, windows, axes=([1, 2], [0, 2]))
        gw = np.tensordot(x.data, windows, axes=([1], [1]))
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=1))
        return grads

    return _result(out, parents, bw, "conv_transpose1d")


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)
