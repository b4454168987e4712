"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every op returns a new :class:`Tensor`. When at least one input requires a
gradient, the output remembers its parents and a closure mapping the output
gradient to input gradients. :func:`backward` walks that graph in reverse
topological order, visiting each node once and summing gradients that reach a
node along several paths.

The graph is rebuilt on every forward pass; nothing is cached between steps.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "sqrt",
    "relu",
    "sigmoid",
    "softplus",
    "abs",
    "square",
    "sin",
    "cos",
    "sum",
    "mean",
    "cumsum",
    "broadcast_to",
    "reshape",
    "concat",
    "stop_gradient",
    "backward",
    "grad_check",
]

_builtin_abs = abs
_builtin_sum = sum


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


def _as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


class Tensor:
    """An immutable float64 array node in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- binary ops


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def backward_fn(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward_fn(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward_fn)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy ``@`` semantics (batched over leading axes)."""
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), backward_fn)


# ----------------------------------------------------------------- unary ops


def neg(a) -> Tensor:
    a = constant(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = constant(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = constant(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = constant(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a, grad_at_zero: float = 0.0) -> Tensor:
    """max(a, 0). ``grad_at_zero`` picks the subgradient used where a == 0."""
    a = constant(a)
    ad = a.data
    out = np.maximum(ad, 0.0)
    if grad_at_zero:
        slope = np.where(ad > 0, 1.0, np.where(ad == 0, grad_at_zero, 0.0))
        return _make(out, (a,), lambda g: (g * slope,))
    return _make(out, (a,), lambda g: (np.where(ad > 0, g, 0.0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = constant(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


_SOFTPLUS_LINEAR = 20.0


def _softplus(x: np.ndarray) -> np.ndarray:
    big = x > _SOFTPLUS_LINEAR
    safe = np.where(big, 0.0, x)
    return np.where(big, x + np.log1p(np.exp(-np.where(big, x, 0.0))), np.log1p(np.exp(safe)))


def softplus(a) -> Tensor:
    """log(1 + e^a), switching to a + log(1 + e^-a) above a = 20."""
    a = constant(a)
    ad = a.data
    slope = _sigmoid(ad)
    return _make(_softplus(ad), (a,), lambda g: (g * slope,))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = constant(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def square(a) -> Tensor:
    a = constant(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sin(a) -> Tensor:
    a = constant(a)
    ad = a.data
    return _make(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a) -> Tensor:
    a = constant(a)
    ad = a.data
    return _make(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


# ------------------------------------------------------ reductions and shape


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = constant(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(out), (a,), backward_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def cumsum(a, axis: int = -1) -> Tensor:
    a = constant(a)

    def backward_fn(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(np.cumsum(a.data, axis=axis), (a,), backward_fn)


def broadcast_to(a, shape) -> Tensor:
    a = constant(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from None
    src = a.shape
    return _make(out, (a,), lambda g: (_unbroadcast(g, src),))


def reshape(a, shape) -> Tensor:
    a = constant(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {src} to {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(src),))


def transpose(a) -> Tensor:
    a = constant(a)
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(a, index) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate on backward."""
    a = constant(a)
    src = a.shape

    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (np.ndarray, list)) for p in parts)

    def backward_fn(g):
        out = np.zeros(src)
        if fancy:
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return _make(a.data[index], (a,), backward_fn)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(constant(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, ts, backward_fn)


def stop_gradient(a) -> Tensor:
    """Identity on values; blocks every gradient flowing back through it."""
    a = constant(a)
    return Tensor(a.data)


# ------------------------------------------------------------------- backward


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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to the graph's leaves.

    Returns a mapping from every ``requires_grad`` leaf reached from ``loss``
    (plus every tensor in ``wrt``) to its gradient. Leaves that do not
    influence the loss get an all-zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[Tensor, np.ndarray] = {}
    if loss.requires_grad:
        pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
        for node in reversed(_topological(loss)):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                grads[node] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg
    for leaf in wrt or ():
        if leaf not in grads:
            grads[leaf] = np.zeros(leaf.shape)
    return {k: np.array(v, dtype=np.float64).reshape(k.shape) for k, v in grads.items()}


def grad_check(
    f: Callable[..., Tensor],
    x,
    eps: float = 1e-6,
) -> float:
    """Compare analytic gradients of scalar ``f`` with central differences.

    ``x`` is an array or a sequence of arrays; ``f`` receives one Tensor per
    array. Returns max |analytic - numeric| / max(1, |analytic|) over every
    coordinate, or ``inf`` if any evaluation is not finite.
    """
    if not (1e-7 < eps < 1e-2):
        raise ValueError(f"eps must lie in (1e-7, 1e-2), got {eps}")
    single = isinstance(x, (np.ndarray, float, int, Tensor))
    arrays = [np.array(constant(v).data if isinstance(v, Tensor) else v, dtype=np.float64)
              for v in ([x] if single else x)]

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = f(*leaves)
    if not np.all(np.isfinite(out.data)):
        return math.inf
    grads = backward(out, wrt=leaves)
    analytic = [grads[leaf] for leaf in leaves]

    worst = 0.0
    for k, base in enumerate(arrays):
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig - eps
            down = f(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic[k].reshape(-1)[i]
            if not (math.isfinite(up) and math.isfinite(down) and math.isfinite(a)):
                return math.inf
            worst = max(worst, _builtin_abs(a - numeric) / max(1.0, _builtin_abs(a)))
    return worst
