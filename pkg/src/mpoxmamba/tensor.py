"""Dense tensor with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a row-major contiguous numpy array together with an
optional gradient buffer. Every forward operation is a pure function; ops that
participate in differentiation record their parents and a vector-Jacobian
closure, and :meth:`Tensor.backward` replays the recorded graph in reverse
topological order, accumulating gradients.

Design choices:

* NCHW layout for image tensors throughout the library.
* float32 for normal training, float64 for gradient verification. Binary ops
  require matching dtypes; there is no implicit promotion.
* Broadcasting is supported for elementwise binary ops only (shapes the model
  actually needs); gradients are un-broadcast by summing the expanded axes.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError

Array = np.ndarray
_FLOAT_DTYPES = (np.float32, np.float64)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (pure inference)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def _as_array(data, dtype=None) -> Array:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    # ascontiguousarray would promote 0-d scalars to 1-D
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Tensor:
    """N-dimensional float array with an optional grad buffer.

    ``data`` is always row-major contiguous. ``grad`` (populated by
    ``backward``) has the same shape and dtype as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "retains_grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents: Tuple["Tensor", ...] = (),
                 _vjp: Optional[Callable[[Array], Sequence[Optional[Array]]]] = None,
                 _op: str = "", dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: Optional[Array] = None
        self.requires_grad = bool(requires_grad)
        self.retains_grad = False
        self._parents = _parents
        self._vjp = _vjp
        self._op = _op

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{grad_flag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def numpy(self) -> Array:
        return self.data

    def retain_grad(self) -> "Tensor":
        self.retains_grad = True
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autodiff ------------------------------------------------------------

    def backward(self, grad: Optional[Array] = None) -> None:
        """Accumulate gradients of ``self`` w.r.t. every reachable tensor.

        Leaves with ``requires_grad`` (and any tensor flagged with
        ``retain_grad``) receive their gradient in ``.grad``; repeated calls
        accumulate, matching per-parameter serialized accumulation.
        """
        if grad is None:
            if self.size != 1:
                raise DimensionError("backward() without a seed requires a scalar tensor")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise DimensionError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        grads: dict[int, Array] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.retains_grad or (node._vjp is None and node.requires_grad):
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        if len(axes) == 1 and not isinstance(axes[0], int):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


TensorLike = Union[Tensor, float, int, Array]


def as_tensor(x: TensorLike, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_op(data: Array, parents: Tuple[Tensor, ...],
            vjp: Callable[[Array], Sequence[Optional[Array]]], op: str) -> Tensor:
    """Wrap an op result, recording the graph only when grad mode is on."""
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp, _op=op)
    return Tensor(data)


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise DimensionError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if isinstance(b.data, np.ndarray) and b.data.ndim > 0:
        _check_same_dtype(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_op(out, (a, b), vjp, "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_op(out, (a, b), vjp, "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_op(out, (a, b), vjp, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "matmul")
    if a.shape[-1] != b.shape[0 if b.ndim <= 2 else -2]:
        raise DimensionError(f"matmul: inner dims {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim >= 2 else np.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim >= 2 else np.outer(a.data, g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_op(out, (a, b), vjp, "matmul")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return make_op(out, (a,), vjp, "exp")


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return make_op(out, (a,), vjp, "log")


# -- activations -----------------------------------------------------------------

def _sigmoid(x: Array) -> Array:
    # evaluated piecewise to stay overflow-free for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return make_op(out, (a,), vjp, "sigmoid")


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid(a.data)
    out = a.data * s

    def vjp(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return make_op(out, (a,), vjp, "silu")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0),)

    return make_op(out, (a,), vjp, "relu")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated stably as max(x, 0) + log1p(exp(-|x|))."""
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def vjp(g):
        return (g * _sigmoid(a.data),)

    return make_op(out, (a,), vjp, "softplus")


def softmax_lastdim(a: Tensor) -> Tensor:
    """Row-stabilized softmax over the last axis; rows sum to 1."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return make_op(out, (a,), vjp, "softmax")


_ELEMENTWISE = {
    "silu": silu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "relu": relu,
    "softmax_lastdim": softmax_lastdim,
}


def elementwise(kind: str, a: Tensor) -> Tensor:
    """Dispatch to a named elementwise activation. Shape is preserved."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}; one of {sorted(_ELEMENTWISE)}") from None
    return fn(a)


# -- shape ops --------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)  # data is contiguous, so the view is too

    def vjp(g):
        return (g.reshape(a.shape),)

    return make_op(out, (a,), vjp, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_op(out, (a,), vjp, "transpose")


def flip(a: Tensor, axis: int) -> Tensor:
    out = np.ascontiguousarray(np.flip(a.data, axis=axis))

    def vjp(g):
        return (np.ascontiguousarray(np.flip(g, axis=axis)),)

    return make_op(out, (a,), vjp, "flip")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return make_op(out, tuple(tensors), vjp, "concat")


def narrow(a: Tensor, key) -> Tensor:
    """Basic slicing with gradient scatter (no fancy indexing)."""
    out = a.data[key]
    if out.ndim:
        out = np.ascontiguousarray(out)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return make_op(out, (a,), vjp, "narrow")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(np.ascontiguousarray(moved[i]) for i in range(len(tensors)))

    return make_op(out, tuple(tensors), vjp, "stack")


# -- reductions --------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return make_op(out, (a,), vjp, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype, copy=True),)

    return make_op(out, (a,), vjp, "mean")


def assert_finite(x: Array, what: str) -> None:
    if not np.isfinite(x).all():
        from .errors import NumericError

        raise NumericError(f"non-finite values in {what}")
