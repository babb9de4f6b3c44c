"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent. Node ids come
from a global counter, so sorting reachable nodes by id gives the insertion
(topological) order; :meth:`Tensor.backward` walks it in reverse, visiting each
node once.

Broadcasting is deliberately explicit. Elementwise binary ops accept
same-shape operands or a 0-d scalar; rows and columns are combined through
:func:`add_row`, :func:`mul_row` and :func:`mul_col`.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import special
from .special import DomainError

__all__ = [
    "Tensor",
    "BatchNormState",
    "ShapeError",
    "DomainError",
    "GraphError",
    "NumericalError",
    "tensor",
    "parameter",
    "no_grad",
    "matmul",
    "add_row",
    "mul_row",
    "mul_col",
    "sum",
    "mean",
    "exp",
    "log",
    "softplus",
    "tanh",
    "sqrt",
    "relu",
    "leaky_relu",
    "digamma",
    "log_gamma",
    "clamp_min",
    "logsumexp",
    "log_softmax",
    "stack_cols",
    "take",
    "batchnorm1d",
    "scalar_special",
]

_node_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class NumericalError(ArithmeticError):
    """A non-finite value reached a graph output."""


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id", "_consumed")
    __array_priority__ = 100

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: BackwardFn | None = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward
        self._id = next(_node_ids)
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tracked leaf."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise GraphError(f"backward() needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise GraphError("graph already consumed by a previous backward()")
        if not np.all(np.isfinite(self.data)):
            raise NumericalError(f"non-finite loss value {self.data!r} at graph output")
        if not self.requires_grad:
            raise GraphError("root does not depend on any tracked tensor")

        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes or not node.requires_grad:
                continue
            nodes[node._id] = node
            stack.extend(node._parents)

        grads: dict[int, np.ndarray] = {self._id: np.ones_like(self.data)}
        for node_id in sorted(nodes, reverse=True):
            node = nodes[node_id]
            g = grads.pop(node_id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise ShapeError(f"{node.op}: gradient shape {pg.shape} != parent shape {parent.shape}")
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg
            # release saved activations held by the closure
            node._backward = _consumed_backward
            node._consumed = True
        self._consumed = True

    # operator sugar ---------------------------------------------------
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

    def __pow__(self, exponent: float):
        return power(self, exponent)


def _consumed_backward(g):
    raise GraphError("graph already consumed by a previous backward()")


def tensor(data) -> Tensor:
    """Constant (untracked) tensor."""
    return Tensor(data)


def parameter(data) -> Tensor:
    """Tracked leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording a graph (parameters are read only)."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


# elementwise binary ------------------------------------------------------


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (use add_row/mul_row/mul_col)")


def _reduce_to(g: np.ndarray, like: Tensor) -> np.ndarray:
    return np.asarray(g.sum()) if like.data.ndim == 0 and g.ndim != 0 else g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_reduce_to(g * bd, a), _reduce_to(g * ad, b)), "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), lambda g: (_reduce_to(g / bd, a), _reduce_to(-g * out / bd, b)), "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return _make(ad**exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


# structured ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """``x[i, :] + row`` for every row i (bias addition)."""
    x, row = _as_tensor(x), _as_tensor(row)
    if x.data.ndim != 2 or row.shape != (x.shape[1],):
        raise ShapeError(f"add_row: {x.shape} and {row.shape}")
    return _make(x.data + row.data, (x, row), lambda g: (g, g.sum(axis=0)), "add_row")


def mul_row(x: Tensor, row: Tensor) -> Tensor:
    """``x[i, :] * row`` for every row i."""
    x, row = _as_tensor(x), _as_tensor(row)
    if x.data.ndim != 2 or row.shape != (x.shape[1],):
        raise ShapeError(f"mul_row: {x.shape} and {row.shape}")
    xd, rd = x.data, row.data
    return _make(xd * rd, (x, row), lambda g: (g * rd, (g * xd).sum(axis=0)), "mul_row")


def mul_col(x: Tensor, col: Tensor) -> Tensor:
    """``x[i, :] * col[i]`` for every row i."""
    x, col = _as_tensor(x), _as_tensor(col)
    if x.data.ndim != 2 or col.shape != (x.shape[0],):
        raise ShapeError(f"mul_col: {x.shape} and {col.shape}")
    xd, cd = x.data, col.data
    return _make(xd * cd[:, None], (x, col), lambda g: (g * cd[:, None], (g * xd).sum(axis=1)), "mul_col")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape
    if axis is None:
        return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    return _make(
        x.data.sum(axis=axis),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
        "sum",
    )


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return sum(x, axis) * (1.0 / n)


def stack_cols(cols: Sequence[Tensor]) -> Tensor:
    """Stack K tensors of shape (B,) into a (B, K) matrix."""
    if not cols:
        raise ShapeError("stack_cols: empty input")
    shape = cols[0].shape
    if len(shape) != 1 or any(c.shape != shape for c in cols):
        raise ShapeError(f"stack_cols: expected equal 1-d shapes, got {[c.shape for c in cols]}")
    data = np.stack([c.data for c in cols], axis=1)
    return _make(data, tuple(cols), lambda g: tuple(g[:, k].copy() for k in range(g.shape[1])), "stack_cols")


def take(x: Tensor, index) -> Tensor:
    """Pick ``x[i, index[i]]`` for each row."""
    index = np.asarray(index, dtype=np.intp)
    if x.data.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"take: {x.shape} with index shape {index.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        out[rows, index] = g
        return (out,)

    return _make(x.data[rows, index], (x,), backward, "take")


# elementwise unary ---------------------------------------------------------


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError("log requires x > 0")
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.logaddexp(0.0, xd), (x,), lambda g: (g * _sigmoid(xd),), "softplus")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -v))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in [0, 1), got {slope}")
    xd = x.data
    scale = np.where(xd > 0, 1.0, slope)
    return _make(xd * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def clamp_min(x: Tensor, lower: float) -> Tensor:
    """``max(x, lower)``; the gradient is zero where the clamp is active."""
    xd = x.data
    active = xd >= lower
    return _make(np.where(active, xd, lower), (x,), lambda g: (g * active,), "clamp_min")


def clamp_max(x: Tensor, upper: float) -> Tensor:
    """``min(x, upper)``; the gradient is zero where the clamp is active."""
    xd = x.data
    active = xd <= upper
    return _make(np.where(active, xd, upper), (x,), lambda g: (g * active,), "clamp_max")


def digamma(x: Tensor) -> Tensor:
    xd = x.data
    return _make(special.digamma(xd), (x,), lambda g: (g * special.trigamma(xd),), "digamma")


def log_gamma(x: Tensor) -> Tensor:
    xd = x.data
    return _make(special.log_gamma(xd), (x,), lambda g: (g * special.digamma(xd),), "log_gamma")


_SPECIAL = {
    "digamma": digamma,
    "log_gamma": log_gamma,
    "log": log,
    "exp": exp,
    "softplus": softplus,
    "tanh": tanh,
}


def scalar_special(x: Tensor, fn: str) -> Tensor:
    """Dispatch an elementwise special function by name."""
    try:
        return _SPECIAL[fn](x)
    except KeyError:
        raise ValueError(f"unknown function {fn!r}; expected one of {sorted(_SPECIAL)}") from None


def logsumexp(x: Tensor, axis: int = 1) -> Tensor:
    xd = x.data
    m = np.max(xd, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(xd - m), axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = np.exp(xd - out)
    return _make(np.squeeze(out, axis), (x,), lambda g: (np.expand_dims(g, axis) * soft,), "logsumexp")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    lse = np.max(xd, axis=axis, keepdims=True)
    lse = lse + np.log(np.sum(np.exp(xd - lse), axis=axis, keepdims=True))
    out = xd - lse
    soft = np.exp(out)
    return _make(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax")


# batch normalisation ----------------------------------------------------------


@dataclass
class BatchNormState:
    """Learned scale/shift plus running statistics for one feature block."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    num_batches: int = field(default=0)

    @classmethod
    def create(cls, num_features: int, eps: float = 1e-5, momentum: float = 0.1) -> "BatchNormState":
        return cls(
            gamma=parameter(np.ones(num_features)),
            beta=parameter(np.zeros(num_features)),
            running_mean=np.zeros(num_features),
            running_var=np.ones(num_features),
            eps=eps,
            momentum=momentum,
        )

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


def batchnorm1d(x: Tensor, state: BatchNormState, train: bool) -> Tensor:
    """Per-feature batch normalisation of a (B, H) tensor.

    In training mode the batch statistics are used (biased variance) and the
    running statistics are updated with the unbiased variance; evaluation mode
    applies the running statistics as a fixed affine map.
    """
    if x.data.ndim != 2 or x.shape[1] != state.gamma.shape[0]:
        raise ShapeError(f"batchnorm1d: input {x.shape} vs {state.gamma.shape[0]} features")
    xd = x.data
    gamma, beta = state.gamma, state.beta
    if not train:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (xd - state.running_mean) * inv_std
        out = xhat * gamma.data + beta.data
        gd = gamma.data
        return _make(
            out,
            (x, gamma, beta),
            lambda g: (g * gd * inv_std, (g * xhat).sum(axis=0), g.sum(axis=0)),
            "batchnorm_eval",
        )

    n = xd.shape[0]
    if n < 2:
        raise ShapeError(f"batchnorm1d in train mode needs a batch of at least 2, got {n}")
    mu = xd.mean(axis=0)
    var = xd.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (xd - mu) * inv_std
    out = xhat * gamma.data + beta.data

    m = state.momentum
    state.running_mean = (1.0 - m) * state.running_mean + m * mu
    state.running_var = (1.0 - m) * state.running_var + m * var * n / (n - 1)
    state.num_batches += 1

    gd = gamma.data

    def backward(g):
        gxhat = g * gd
        gx = inv_std * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(out, (x, gamma, beta), backward, "batchnorm_train")
