"""Dense float64 tensors with a reverse-mode tape and an Adam optimizer.

Operations record onto the innermost active :class:`Tape` whenever one of
their inputs requires a gradient.  With no active tape nothing is recorded,
which is how inference and finite-difference probes run.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_local = threading.local()


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: int | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes nest, and operations record onto the
    innermost one.  A tape supports exactly one :meth:`backward` call.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward, op: str) -> None:
        out.requires_grad = True
        out.node = len(self.nodes)
        out.tape = self
        self.nodes.append(_Node(inputs, backward, op))

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("backward already called on this tape")
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if loss.tape is not self or loss.node is None:
            raise TapeError("loss was not recorded on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
        for nid in range(loss.node, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t.tape is self:
                    prev = grads.get(t.node)
                    grads[t.node] = gi if prev is None else prev + gi
                elif t.node is None:
                    prev = leaves.get(id(t))
                    leaves[id(t)] = (t, gi if prev is None else prev[1] + gi)
        for t, g in leaves.values():
            t.grad = g.copy() if t.grad is None else t.grad + g
        self.nodes.clear()


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward, op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return g @ B.T, A.T @ g

    return _emit(A @ B, (a, b), bw, "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    A, B = a.data, b.data

    def bw(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _emit(A * B, (a, b), bw, "mul")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form is overflow-free and gives exactly 0.5 at 0
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return np.split(g, bounds, axis=axis)

    return _emit(data, ts, bw, "concat")


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int)) or i is Ellipsis for i in parts)

    def bw(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _emit(x.data[index], (x,), bw, "getitem")


def tile_rows(x, k: int) -> Tensor:
    """Stack ``k`` copies of ``x`` along axis 0."""
    x = as_tensor(x)
    shape = x.shape
    reps = (k,) + (1,) * (x.data.ndim - 1)
    return _emit(np.tile(x.data, reps), (x,),
                 lambda g: (g.reshape((k,) + shape).sum(axis=0),), "tile_rows")


def min(x, axis: int = 0) -> Tensor:  # noqa: A001
    """Minimum along ``axis``; the gradient goes to the first minimizer."""
    x = as_tensor(x)
    idx = np.argmin(x.data, axis=axis)
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (out,)

    return _emit(np.min(x.data, axis=axis), (x,), bw, "min")


def segment_sum(x, segments: np.ndarray, rows: np.ndarray, n_segments: int) -> Tensor:
    """out[s] = sum of x[rows[p]] over pairs p with segments[p] == s.

    Accumulation follows the order of the pair arrays, so a caller that
    sorts the pairs canonically gets bitwise reproducible sums.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"segment_sum: expected 2-d input, got {x.shape}")
    segments = np.asarray(segments, dtype=np.intp)
    rows = np.asarray(rows, dtype=np.intp)
    out = np.zeros((n_segments, x.shape[1]))
    np.add.at(out, segments, x.data[rows])
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape)
        np.add.at(gx, rows, g[segments])
        return (gx,)

    return _emit(out, (x,), bw, "segment_sum")


def mse_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: incompatible shapes {pred.shape} and {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        d = (2.0 / n) * g * diff
        return d, -d

    return _emit(np.mean(diff * diff), (pred, target), bw, "mse_loss")


BCE_EPS = 1e-7


def bce_loss(score, label) -> Tensor:
    """Mean binary cross-entropy; scores are clamped to [1e-7, 1 - 1e-7]."""
    score, label = as_tensor(score), as_tensor(label)
    _broadcast_check(score, label, "bce_loss")
    s = np.clip(score.data, BCE_EPS, 1.0 - BCE_EPS)
    y = np.broadcast_to(label.data, s.shape)
    n = s.size
    loss = -np.mean(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))
    inside = (score.data >= BCE_EPS) & (score.data <= 1.0 - BCE_EPS)

    def bw(g):
        gs = g * (-(y / s) + (1.0 - y) / (1.0 - s)) / n
        gy = g * (-(np.log(s) - np.log(1.0 - s))) / n
        return gs * inside, _unbroadcast(gy, label.shape)

    return _emit(np.asarray(loss), (score, label), bw, "bce_loss")


# ---------------------------------------------------------------- checking


class NondeterminismError(RuntimeError):
    pass


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max symmetric relative error between tape and central-difference gradients."""
    base = f(*inputs).item()
    if f(*inputs).item() != base:
        raise NondeterminismError("f returned different values for identical inputs")

    saved = [t.grad for t in inputs]
    flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    try:
        with Tape() as tape:
            loss = f(*inputs)
        tape.backward(loss)
        analytic = [np.zeros(t.shape) if t.grad is None else t.grad for t in inputs]
    finally:
        for t, g, flag in zip(inputs, saved, flags):
            t.grad = g
            t.requires_grad = flag

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        af = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*inputs).item()
            flat[i] = orig - h
            fm = f(*inputs).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(af[i] - num) / max(1e-8, abs(af[i]) + abs(num))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam update, in place.  ``None`` grads count as zero."""
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    if len(state.m) != len(params):
        raise ShapeError(f"adam_step: state tracks {len(state.m)} params, got {len(params)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: param {p.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
