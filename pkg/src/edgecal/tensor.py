"""Dense 2-D tensors with define-by-run reverse-mode differentiation.

Every value is a float64 matrix. Operations on tensors attached to a
:class:`Tape` are recorded in execution order; :func:`backward` walks the
tape in reverse and returns a :class:`GradientStore` keyed by leaf name.
A fresh tape is built for every forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ContractError, DimensionError


class Tensor:
    __slots__ = ("data", "tape", "key")
    __array_ufunc__ = None  # make ndarray operators defer to ours

    def __init__(self, data, tape: Tape | None = None, key: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim > 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.tape = tape
        self.key = key

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f", key={self.key!r}" if self.key else ""
        return f"Tensor(shape={self.shape}{tag})"

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

    def __rmatmul__(self, other):
        return matmul(other, self)


@dataclass
class TapeEntry:
    op: str
    out: Tensor
    inputs: list[Tensor]
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., tuple]


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.leaves: dict[str, Tensor] = {}

    def watch(self, value, key: str) -> Tensor:
        """Register ``value`` as a differentiable leaf named ``key``."""
        if key in self.leaves:
            raise ContractError(f"leaf {key!r} already on tape")
        leaf = Tensor(value, tape=self, key=key)
        self.leaves[key] = leaf
        return leaf

    def watch_all(self, params: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.watch(v, k) for k, v in params.items()}

    def replay(self) -> list[np.ndarray]:
        """Recompute every entry from the leaves, in tape order."""
        values: dict[int, np.ndarray] = {}

        def lookup(t: Tensor) -> np.ndarray:
            return values.get(id(t), t.data)

        out = []
        for entry in self.entries:
            val = entry.forward(*(lookup(t) for t in entry.inputs))
            values[id(entry.out)] = val
            out.append(val)
        return out

    def __len__(self) -> int:
        return len(self.entries)


class GradientStore(dict):
    """Leaf name -> gradient array. Gradients add up until :meth:`reset`."""

    def accumulate(self, key: str, grad: np.ndarray) -> None:
        if key in self:
            if self[key].shape != grad.shape:
                raise DimensionError(f"gradient shape {grad.shape} != stored {self[key].shape} for {key!r}")
            self[key] = self[key] + grad
        else:
            self[key] = np.array(grad, dtype=np.float64)

    def reset(self) -> None:
        for k in self:
            self[k] = np.zeros_like(self[k])


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op: str, forward, vjp, *inputs) -> Tensor:
    ts = [as_tensor(x) for x in inputs]
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands belong to different tapes")
            tape = t.tape
    out = Tensor(forward(*(t.data for t in ts)), tape=tape)
    if tape is not None:
        tape.entries.append(TapeEntry(op, out, ts, forward, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


def add(a, b) -> Tensor:
    def fwd(x, y):
        _check_broadcast(x, y, "add")
        return x + y

    return _apply("add", fwd, lambda g, x, y, o: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)), a, b)


def sub(a, b) -> Tensor:
    def fwd(x, y):
        _check_broadcast(x, y, "sub")
        return x - y

    return _apply("sub", fwd, lambda g, x, y, o: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)), a, b)


def mul(a, b) -> Tensor:
    def fwd(x, y):
        _check_broadcast(x, y, "mul")
        return x * y

    return _apply("mul", fwd, lambda g, x, y, o: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), a, b)


def div(a, b) -> Tensor:
    def fwd(x, y):
        _check_broadcast(x, y, "div")
        return x / y

    def vjp(g, x, y, o):
        return _unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)

    return _apply("div", fwd, vjp, a, b)


def neg(a) -> Tensor:
    return _apply("neg", np.negative, lambda g, x, o: (-g,), a)


def matmul(a, b) -> Tensor:
    def fwd(x, y):
        if x.shape[1] != y.shape[0]:
            raise DimensionError(f"matmul: shapes {x.shape} and {y.shape} are not aligned")
        return x @ y

    return _apply("matmul", fwd, lambda g, x, y, o: (g @ y.T, x.T @ g), a, b)


def spmm(matrix: sp.spmatrix, a) -> Tensor:
    """Constant sparse matrix times a tensor."""
    if not sp.issparse(matrix) or matrix.format != "csr":
        matrix = sp.csr_matrix(matrix)

    def fwd(x):
        if matrix.shape[1] != x.shape[0]:
            raise DimensionError(f"spmm: shapes {matrix.shape} and {x.shape} are not aligned")
        return np.asarray(matrix @ x)

    return _apply("spmm", fwd, lambda g, x, o: (np.asarray(matrix.T @ g),), a)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a) -> Tensor:
    return _apply("sigmoid", _sigmoid, lambda g, x, o: (g * o * (1.0 - o),), a)


def softplus(a) -> Tensor:
    return _apply("softplus", _softplus, lambda g, x, o: (g * _sigmoid(x),), a)


def relu(a) -> Tensor:
    return _apply("relu", lambda x: np.maximum(x, 0.0), lambda g, x, o: (g * (x > 0),), a)


def log(a) -> Tensor:
    return _apply("log", np.log, lambda g, x, o: (g / x,), a)


def exp(a) -> Tensor:
    return _apply("exp", np.exp, lambda g, x, o: (g * o,), a)


def sqrt(a) -> Tensor:
    return _apply("sqrt", np.sqrt, lambda g, x, o: (g / (2.0 * o),), a)


def abs(a) -> Tensor:  # noqa: A001
    return _apply("abs", np.abs, lambda g, x, o: (g * np.sign(x),), a)


def minimum(a, b) -> Tensor:
    def vjp(g, x, y, o):
        take_x = x <= y
        return g * take_x, g * ~take_x

    return _apply("minimum", np.minimum, vjp, a, b)


def maximum(a, b) -> Tensor:
    def vjp(g, x, y, o):
        take_x = x > y
        return g * take_x, g * ~take_x

    return _apply("maximum", np.maximum, vjp, a, b)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    if axis is None:
        return _apply("sum", lambda x: np.array([[x.sum()]]), lambda g, x, o: (np.full(x.shape, g[0, 0]),), a)
    return _apply(
        f"sum{axis}",
        lambda x: x.sum(axis=axis, keepdims=True),
        lambda g, x, o: (np.broadcast_to(g, x.shape).copy(),),
        a,
    )


def mean(a) -> Tensor:
    a = as_tensor(a)
    return sum(a) * (1.0 / a.data.size)


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def fwd(*xs):
        return np.concatenate(xs, axis=axis)

    def vjp(g, *args):
        return tuple(np.split(g, cuts, axis=axis))

    return _apply("concat", fwd, vjp, *ts)


def take_rows(a, index) -> Tensor:
    """Gather rows; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.intp)

    def vjp(g, x, o):
        grad = np.zeros_like(x)
        np.add.at(grad, index, g)
        return (grad,)

    return _apply("take_rows", lambda x: x[index], vjp, a)


def segment_sum(a, segments, n_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``n_segments`` groups given per-row segment ids."""
    segments = np.asarray(segments, dtype=np.intp)

    def fwd(x):
        out = np.zeros((n_segments, x.shape[1]))
        np.add.at(out, segments, x)
        return out

    return _apply("segment_sum", fwd, lambda g, x, o: (g[segments],), a)


def backward(loss: Tensor, tape: Tape | None = None, store: GradientStore | None = None) -> GradientStore:
    """Gradients of a scalar ``loss`` with respect to every leaf on ``tape``.

    Results are added into ``store`` when one is given.
    """
    tape = tape if tape is not None else loss.tape
    if tape is None:
        raise ContractError("loss is not attached to a tape")
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) root, got shape {loss.shape}")
    store = GradientStore() if store is None else store
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.out), None)
        if g is None:
            continue
        parts = entry.vjp(g, *(t.data for t in entry.inputs), entry.out.data)
        for t, gi in zip(entry.inputs, parts):
            if gi is None or t.tape is None:
                continue
            k = id(t)
            grads[k] = grads[k] + gi if k in grads else gi
    for key, leaf in tape.leaves.items():
        store.accumulate(key, grads.get(id(leaf), np.zeros_like(leaf.data)))
    return store


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict[str, np.ndarray]:
    """One Adam update with decoupled weight decay; returns new params, mutates ``state``."""
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    new = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ContractError(f"gradient for {k!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        if m.shape != p.shape:
            raise ContractError(f"moment for {k!r} has shape {m.shape}, parameter has {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[k], state.v[k] = m, v
        p = p - lr * weight_decay * p
        new[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return new
