"""Dense matrix tensors with tape-based reverse-mode differentiation.

Every tensor is a 2-D array. Operations that touch a tensor bound to a
:class:`Tape` append an entry holding the operand handles and whatever
forward values the backward rule needs. Tensors without a tape are plain
constants, which is how inference runs (no recording overhead).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

LEAKY_SLOPE = 0.01


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "tape", "node", "name")

    def __init__(self, data, tape: Tape | None = None, node: int | None = None, name: str | None = None):
        data = np.asarray(data)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(1, -1)
        if data.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {data.shape}")
        self.data = data
        self.tape = tape
        self.node = node
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, taped={self.tape is not None})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)


@dataclass
class _Entry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Tape:
    """Ordered record of primitive operations.

    Entries are appended in execution order, so the list is already a
    topological order and ``backward`` walks it in reverse exactly once.
    """

    entries: list[_Entry] = field(default_factory=list)
    leaves: dict[str, Tensor] = field(default_factory=dict)
    _next: int = 0

    def _new_node(self) -> int:
        self._next += 1
        return self._next - 1

    def param(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.leaves:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(array, tape=self, node=self._new_node(), name=name)
        self.leaves[name] = t
        return t

    def params(self, arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.param(k, v) for k, v in arrays.items()}

    def __len__(self):
        return len(self.entries)


def constant(array) -> Tensor:
    return Tensor(np.asarray(array))


def _tape_of(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = t.tape
    return tape


def _check_finite(out: np.ndarray, op: str):
    if not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def _record(op: str, out: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    _check_finite(out, op)
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(out)
    result = Tensor(out, tape=tape, node=tape._new_node())
    tape.entries.append(_Entry(op, inputs, result, backward))
    return result


# Matmul accounting. Tests use this to assert that no n x n product appears.
@dataclass
class OpLog:
    matmuls: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def madds(self) -> int:
        return sum(m * k * n for m, k, n in self.matmuls)


_active_logs: list[OpLog] = []


@contextlib.contextmanager
def log_ops():
    log = OpLog()
    _active_logs.append(log)
    try:
        yield log
    finally:
        _active_logs.remove(log)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))


def _reduce_row_broadcast(g: np.ndarray, shape) -> np.ndarray:
    if shape[0] == 1 and g.shape[0] != 1:
        return g.sum(axis=0, keepdims=True)
    return g


def _check_row_broadcast(a: Tensor, b: Tensor, op: str):
    if b.shape == a.shape:
        return
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return
    raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not align")


# ---------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    for log in _active_logs:
        log.matmuls.append((a.shape[0], a.shape[1], b.shape[1]))
    A, B = a.data, b.data
    return _record("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _record("transpose", np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1 x cols row (bias) broadcast over rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_row_broadcast(a, b, "add")
    shape_b = b.shape
    return _record("add", a.data + b.data, (a, b), lambda g: (g, _reduce_row_broadcast(g, shape_b)))


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be a broadcast row."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_row_broadcast(a, b, "mul")
    A, B = a.data, b.data
    return _record("mul", A * B, (a, b), lambda g: (g * B, _reduce_row_broadcast(g * A, B.shape)))


def concat_cols(*ts: Tensor) -> Tensor:
    ts = tuple(_as_tensor(t) for t in ts)
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1:
        raise ValueError(f"concat_cols: row counts differ {[t.shape for t in ts]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in ts])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _record("concat_cols", np.concatenate([t.data for t in ts], axis=1), ts, back)


def row_mean(a: Tensor) -> Tensor:
    """Mean over rows, giving a single 1 x cols row."""
    n = a.shape[0]
    if n == 0:
        raise ValueError("row_mean of an empty tensor")
    return _record("row_mean", a.data.mean(axis=0, keepdims=True), (a,),
                   lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = a.data >= 0
    out = np.where(pos, a.data, slope * a.data)
    return _record("leaky_relu", out, (a,), lambda g: (np.where(pos, g, slope * g),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    p = x >= 0
    out[p] = 1.0 / (1.0 + np.exp(-x[p]))
    e = np.exp(x[~p])
    out[~p] = e / (1.0 + e)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(a: Tensor) -> Tensor:
    s = _softmax_np(a.data)

    def back(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _record("softmax_rows", s, (a,), back)


def gather_rows(a: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    n, shape = a.shape[0], a.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError("gather_rows: index out of range")
    return _record("gather_rows", a.data[index], (a,), back)


def scatter_add_rows(a: Tensor, index, n_out: int, weights=None) -> Tensor:
    """out[index[k]] += weights[k] * a[k]; ``weights`` are constants."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != a.shape[0]:
        raise ValueError("scatter_add_rows: one target row per input row")
    w = np.ones(a.shape[0], dtype=a.data.dtype) if weights is None else np.asarray(weights, dtype=a.data.dtype)
    op = sp.csr_matrix((w, (index, np.arange(a.shape[0]))), shape=(n_out, a.shape[0]))
    return sparse_matmul(op, a, name="scatter_add_rows")


def sparse_matmul(op: sp.spmatrix, a: Tensor, name: str = "sparse_matmul") -> Tensor:
    """Constant sparse operator applied on the left."""
    if op.shape[1] != a.shape[0]:
        raise ValueError(f"{name}: operator {op.shape} vs tensor {a.shape}")
    opT = op.T.tocsr()
    out = np.asarray(op @ a.data)
    return _record(name, out, (a,), lambda g: (np.asarray(opT @ g),))


def reduce_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _record("reduce_sum", a.data.sum().reshape(1, 1), (a,),
                   lambda g: (np.full(shape, g[0, 0], dtype=a.data.dtype),))


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under row-softmax of ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if n == 0:
        raise ValueError("cross entropy over zero rows")
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= c:
        raise ValueError("labels must be one class index per row within range")
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = (logz - shifted[np.arange(n), labels]).mean()

    def back(g):
        p = _softmax_np(x)
        p[np.arange(n), labels] -= 1.0
        return (p * (g[0, 0] / n),)

    return _record("cross_entropy", np.array([[loss]], dtype=x.dtype), (logits,), back)


# ---------------------------------------------------------------- composites

def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def row_sum(a: Tensor) -> Tensor:
    """Per-row sums as an n x 1 column."""
    ones = Tensor(np.ones((a.shape[1], 1), dtype=a.data.dtype))
    return matmul(a, ones)


# ---------------------------------------------------------------- backward

def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of ``loss`` with respect to every leaf registered on ``tape``.

    Leaves the loss does not depend on receive zero arrays.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"loss must be 1x1, got {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss.node: np.ones((1, 1), dtype=loss.data.dtype)}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output.node, None)
        if g is None:
            continue
        for inp, gi in zip(entry.inputs, entry.backward(g)):
            if inp.tape is None or gi is None:
                continue
            prev = grads.get(inp.node)
            grads[inp.node] = gi if prev is None else prev + gi
    out = {}
    for name, leaf in tape.leaves.items():
        g = grads.get(leaf.node)
        if g is None:
            g = np.zeros_like(leaf.data)
        elif not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
        out[name] = g
    return out
