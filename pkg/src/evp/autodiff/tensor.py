"""Dense tensors with a reverse-mode differentiation graph.

Every forward operation records its parents and a backward rule mapping the
output gradient to one gradient per parent.  ``backward`` walks the graph
once in reverse topological order, accumulates gradients into leaves and
then retires the graph so that replaying it is an error.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import GraphError, NumericalError, ShapeError

FLOAT_DTYPES = (np.dtype("float32"), np.dtype("float64"))

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """N-dimensional float array that may participate in a graph.

    Parameters
    ----------
    data : array_like
        Values. Float32 and float64 arrays keep their dtype; anything else is
        converted to ``dtype`` (float64 when not given).
    requires_grad : bool
        Whether gradients flow into this tensor.
    dtype : str or numpy dtype, optional
        Forced storage dtype, one of float32 / float64.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=_resolve_dtype(data, dtype), copy=True)
        _check_finite(arr, "leaf")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        _check_finite(data, op)
        out.data = data
        out.grad = None
        out._op = op
        out._consumed = False
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            for p in parents:
                if p._consumed:
                    raise GraphError(f"{op}: input belongs to a graph that was already differentiated")
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -----------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self):
        return backward(self)


def _resolve_dtype(data, dtype):
    if dtype is not None:
        dt = np.dtype(dtype)
        if dt not in FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {dt}")
        return dt
    if isinstance(data, Tensor):
        return data.dtype
    if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES:
        return data.dtype
    return np.dtype("float64")


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"{op} produced a non-finite value")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


def broadcast_shape(*shapes: Sequence[int]) -> tuple[int, ...]:
    """Shape rule for binary elementwise ops (numpy broadcasting)."""
    try:
        return tuple(np.broadcast_shapes(*[tuple(s) for s in shapes]))
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {list(shapes)}") from exc


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after a broadcast forward."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    if np.any(b.data == 0):
        raise NumericalError("division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return Tensor._from_op(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return Tensor._from_op(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NumericalError below
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericalError("log of a non-positive value")
    x = a.data
    return Tensor._from_op(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericalError("sqrt of a negative value")
    out = np.sqrt(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def square(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._from_op(x * x, (a,), lambda g: (2 * g * x,), "square")


_UNARY = {"relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch one of add, sub, mul, relu, sigmoid, exp, log."""
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        if b is not None:
            raise ValueError(f"{kind} takes one operand")
        return _UNARY[kind](as_tensor(a))
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ----------------------------------------------------------------------
# reductions and shape ops
# ----------------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    out = np.asarray(a.data.sum(axis=axes, keepdims=keepdims), dtype=a.dtype)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape
    out = np.asarray(a.data.mean(axis=axes, keepdims=keepdims), dtype=a.dtype)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).astype(a.dtype),)

    return Tensor._from_op(out, (a,), bw, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _coerce_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    broadcast_shape(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return Tensor._from_op(ad @ bd, (a, b), bw, "matmul")


def masked_select(a: Tensor, mask) -> Tensor:
    """Gather the entries where ``mask`` is true into a 1-D tensor."""
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"mask shape {mask.shape} differs from tensor shape {a.shape}")
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[mask] = g
        return (full,)

    return Tensor._from_op(a.data[mask], (a,), bw, "masked_select")


def cumsum(a: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axes(axis, a.ndim)[0]

    def bw(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return Tensor._from_op(np.cumsum(a.data, axis=axis), (a,), bw, "cumsum")


# ----------------------------------------------------------------------
# graph traversal
# ----------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Differentiate a scalar ``loss`` with respect to every reachable leaf.

    Gradients are added onto ``leaf.grad`` (summing across repeated uses)
    and also returned as a ``{leaf: grad}`` map for this pass only. The
    graph is retired afterwards; a second call raises ``GraphError``.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already differentiated; run a new forward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")

    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if g is None:
                continue
            g = g.astype(node.dtype, copy=False)
            result[node] = g
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if node._consumed or node._backward is None:
            raise GraphError("graph already differentiated; run a new forward pass")
        if g is not None:
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        node._backward = None
        node._parents = ()
        node._consumed = True
    return result


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad and t.is_leaf]
