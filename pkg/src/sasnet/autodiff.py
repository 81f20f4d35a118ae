"""Small reverse-mode differentiation tape over dense float64 arrays.

Only the operators the sinusoidal networks and their losses need are
provided. Every op records its parents and a closure that maps the
output gradient to parent gradient contributions; ``Tensor.backward``
walks the graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from ._kernels import sincos

_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            contribs = node._backward(node.grad)
            # a freshly computed array can be adopted as a parent's grad without a copy,
            # unless it is this node's (still referenced) grad or was already handed out
            held = {id(node.grad)} if node is self else set()
            for parent, g in zip(node._parents, contribs):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    own = (isinstance(g, np.ndarray) and g.base is None and g.dtype == np.float64
                           and g.flags.writeable and g.shape == parent.shape and id(g) not in held)
                    parent.grad = g if own else np.array(g, dtype=np.float64, copy=True)
                    held.add(id(g))
                else:
                    parent.grad += g
            # interior gradients are not needed once propagated
            if not node.is_leaf and node is not self:
                node.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _topo_order(root: Tensor) -> list[Tensor]:
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap a precomputed result as a graph node.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    """
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _shape_fail(op: str, a: Tensor, b: Tensor):
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    """Allow equal shapes, scalars, or a row vector broadcast over a matrix."""
    if a.shape == b.shape or a.data.ndim == 0 or b.data.ndim == 0:
        return
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.data.ndim == 2 and a.data.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    if a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[1] and 1 in (a.shape[0], b.shape[0]):
        return
    _shape_fail(op, a, b)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    if len(shape) == 1:
        return g.sum(axis=0)
    return g.sum(axis=0, keepdims=True)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return custom(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return custom(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    """Hadamard product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return custom(ad * bd, (a, b), back, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        _shape_fail("matmul", a, b)
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return custom(ad @ bd, (a, b), back, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return custom(a.data.T, (a,), lambda g: (g.T,), "transpose")


def sin(a) -> Tensor:
    a = as_tensor(a)
    s, c = sincos(a.data)
    return custom(s, (a,), lambda g: (g * c,), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    s, c = sincos(a.data)
    return custom(c, (a,), lambda g: (-g * s,), "cos")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return custom(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def hinge(a, threshold: float = 0.0) -> Tensor:
    """max(a - threshold, 0)."""
    a = as_tensor(a)
    shifted = a.data - threshold
    on = shifted > 0
    return custom(np.where(on, shifted, 0.0), (a,), lambda g: (g * on,), "hinge")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return custom(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return custom(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return custom(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum")
    if a.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"sum: axis={axis} unsupported for shape {shape}")

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return custom(a.data.sum(axis=axis), (a,), back, "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.data.size
    return custom(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape),), "mean")


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    other = 1 - axis
    for p in parts[1:]:
        if p.data.ndim != 2 or p.shape[other] != parts[0].shape[other]:
            _shape_fail("concat", parts[0], p)
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def back(g):
        if axis == 1:
            return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return custom(np.concatenate([p.data for p in parts], axis=axis), parts, back, "concat")


def take_columns(a, index: np.ndarray) -> Tensor:
    """Gather columns ``a[:, index]``; repeated indices accumulate in backward."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or (index.size and (index.min() < 0 or index.max() >= a.shape[1])):
        raise ShapeError(f"take_columns: index out of range for shape {a.shape}")
    ncols = a.shape[1]
    onehot = np.zeros((index.size, ncols))
    onehot[np.arange(index.size), index] = 1.0

    return custom(a.data[:, index], (a,), lambda g: (g @ onehot,), "take_columns")


def mul_columns(h, m, index: np.ndarray) -> Tensor:
    """``h * m[:, index]`` without materialising the gathered mask."""
    h, m = as_tensor(h), as_tensor(m)
    index = np.asarray(index, dtype=np.int64)
    if (h.data.ndim != 2 or m.data.ndim != 2 or h.shape[0] != m.shape[0] or index.shape != (h.shape[1],)
            or (index.size and (index.min() < 0 or index.max() >= m.shape[1]))):
        raise ShapeError(f"mul_columns: cannot index {m.shape} columns for activations {h.shape}")
    hd, md = np.ascontiguousarray(h.data), np.ascontiguousarray(m.data)

    def back(g):
        gh, gm = _kernels.mul_columns_grad(np.ascontiguousarray(g), hd, md, index)
        return (gh if h.requires_grad else None), (gm if m.requires_grad else None)

    return custom(_kernels.mul_columns(hd, md, index), (h, m), back, "mul_columns")


def take_rows(a, rows: np.ndarray) -> Tensor:
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, rows, g)
        return (out,)

    return custom(a.data[rows], (a,), back, "take_rows")


# -- optimizer ---------------------------------------------------------------


class AdamState:
    __slots__ = ("first_moment", "second_moment", "step_count", "learning_rate", "beta1", "beta2", "epsilon")

    def __init__(self, shape, learning_rate: float, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.first_moment = np.zeros(shape)
        self.second_moment = np.zeros(shape)
        self.step_count = 0
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon


def adam_step(param: np.ndarray, grad: np.ndarray | None, state: AdamState, name: str = "?"):
    """One bias-corrected Adam update, applied to ``param`` in place."""
    if grad is None:
        grad = np.zeros_like(param)
    if grad.shape != param.shape or state.first_moment.shape != param.shape:
        raise ShapeError(f"adam_step({name}): shapes {param.shape}, {grad.shape}, {state.first_moment.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    m, v = state.first_moment, state.second_moment
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    param -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Adam over named parameter groups, each with its own learning rate."""

    def __init__(self, groups: Iterable[tuple[dict[str, Tensor], float]], beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params: dict[str, Tensor] = {}
        self.states: dict[str, AdamState] = {}
        for params, lr in groups:
            for name, p in params.items():
                if name in self.params:
                    raise ValueError(f"parameter {name!r} appears in two groups")
                self.params[name] = p
                self.states[name] = AdamState(p.shape, lr, beta1, beta2, epsilon)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        for name, p in self.params.items():
            adam_step(p.data, p.grad, self.states[name], name)
