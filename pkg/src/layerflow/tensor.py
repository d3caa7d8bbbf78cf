"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array. Operations are plain functions; when a
Tape is active and an input requires gradients, each operation appends
one node (inputs, output id, backward rule) to the tape, so node order
is the topological order of the computation. `backward` sweeps the tape
once, newest node first, seeds the scalar loss with 1 and accumulates
gradients into every leaf tensor's `.grad`.

Elementwise binary ops follow numpy broadcasting; gradients are summed
back over the broadcast axes. All results are float64 regardless of
input dtype.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from . import _backend


class ShapeError(ValueError):
    """An operation received operands with incompatible shapes."""


class TapeError(RuntimeError):
    """Backward was asked to do something the tape cannot support."""


_ids = itertools.count(1)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.id = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def is_finite(self) -> bool:
        if not np.all(np.isfinite(self.data)):
            return False
        return self.grad is None or bool(np.all(np.isfinite(self.grad)))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __truediv__(self, other):
        return div(self, as_tensor(other))


def _scalar_err(t):
    raise ShapeError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("kind", "inputs", "out_id", "bwd")

    def __init__(self, kind, inputs, out_id, bwd):
        self.kind = kind
        self.inputs = inputs
        self.out_id = out_id
        self.bwd = bwd


_STACK: list["Tape"] = []


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; ops executed inside record themselves on
    the innermost active tape.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _STACK.pop()
        if popped is not self:
            raise TapeError("tape context exited out of order")
        return False

    def record(self, kind: str, inputs: Sequence[Tensor], out: Tensor,
               bwd: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        for t in inputs:
            if t.requires_grad and t.id not in self._produced:
                self._leaves.setdefault(t.id, t)
        self._produced.add(out.id)
        self.nodes.append(_Node(kind, tuple(inputs), out.id, bwd))

    @property
    def leaves(self) -> dict[int, Tensor]:
        return dict(self._leaves)


def active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


def _finish(kind, inputs, data, bwd_factory):
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg)
    tape = active_tape()
    if tape is not None and rg:
        tape.record(kind, inputs, out, bwd_factory())
    return out


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Single reverse sweep. Returns a map from leaf tensor id to
    gradient and also stores each gradient on the leaf's `.grad`.
    Leaves the loss never touched get an explicit zero gradient."""
    if loss.data.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.id not in tape._produced:
        raise TapeError("loss tensor was not produced on this tape")

    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.out_id, None)
        if g is None:
            continue
        in_grads = node.bwd(g)
        for t, ig in zip(node.inputs, in_grads):
            if ig is None or not t.requires_grad:
                continue
            acc = grads.get(t.id)
            # never accumulate in place: backward rules may hand back
            # shared arrays (e.g. the upstream gradient itself)
            grads[t.id] = ig if acc is None else acc + ig

    out: dict[int, np.ndarray] = {}
    for lid, leaf in tape._leaves.items():
        g = grads.get(lid)
        if g is None:
            g = np.zeros_like(leaf.data)
        g = np.ascontiguousarray(g, dtype=np.float64)
        leaf.grad = g
        out[lid] = g
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


def _check_broadcast(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bwd_factory():
        def bwd(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return bwd

    return _finish("add", (a, b), a.data + b.data, bwd_factory)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bwd_factory():
        def bwd(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
        return bwd

    return _finish("sub", (a, b), a.data - b.data, bwd_factory)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def bwd_factory():
        def bwd(g):
            return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)
        return bwd

    return _finish("mul", (a, b), ad * bd, bwd_factory)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data

    def bwd_factory():
        def bwd(g):
            ga = _unbroadcast(g / bd, a.shape)
            gb = _unbroadcast(-g * ad / (bd * bd), b.shape)
            return ga, gb
        return bwd

    return _finish("div", (a, b), ad / bd, bwd_factory)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x (n, k), w (k, m), b (m,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(
            f"affine: need x (n,k), w (k,m), b (m,); got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(
            f"affine: inner dims disagree: x {x.shape}, w {w.shape}, b {b.shape}")
    xd, wd = x.data, w.data

    def bwd_factory():
        def bwd(g):
            return g @ wd.T, xd.T @ g, g.sum(axis=0)
        return bwd

    return _finish("affine", (x, w, b), xd @ wd + b.data, bwd_factory)


def sine(x: Tensor, omega: float = 1.0) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    om = float(omega)

    def bwd_factory():
        def bwd(g):
            return (_backend.active.sine_bwd(xd, om, g),)
        return bwd

    return _finish("sine", (x,), _backend.active.sine_fwd(xd, om), bwd_factory)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = _backend.active.sigmoid_fwd(x.data)

    def bwd_factory():
        def bwd(g):
            return (_backend.active.sigmoid_bwd(y, g),)
        return bwd

    return _finish("sigmoid", (x,), y, bwd_factory)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)

    def bwd_factory():
        def bwd(g):
            return (g * y,)
        return bwd

    return _finish("exp", (x,), y, bwd_factory)


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def bwd_factory():
        def bwd(g):
            return (2.0 * xd * g,)
        return bwd

    return _finish("square", (x,), xd * xd, bwd_factory)


def absolute(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def bwd_factory():
        def bwd(g):
            # subgradient 0 at the kink
            return (np.sign(xd) * g,)
        return bwd

    return _finish("abs", (x,), np.abs(xd), bwd_factory)


def _axis_restore(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bwd_factory():
        def bwd(g):
            return (_axis_restore(g, shape, axis).copy(),)
        return bwd

    return _finish("sum", (x,), x.data.sum(axis=axis), bwd_factory)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    n = x.data.size if axis is None else shape[axis]

    def bwd_factory():
        def bwd(g):
            return (_axis_restore(g, shape, axis) / n,)
        return bwd

    return _finish("mean", (x,), x.data.mean(axis=axis), bwd_factory)


def variance(x: Tensor, axis: int | None = None) -> Tensor:
    """Population variance along `axis` (all elements when None)."""
    x = as_tensor(x)
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    n = xd.size if axis is None else xd.shape[axis]

    def bwd_factory():
        def bwd(g):
            if axis is None:
                ge = np.broadcast_to(g, xd.shape)
            else:
                ge = np.broadcast_to(np.expand_dims(g, axis), xd.shape)
            return ((2.0 / n) * (xd - mu) * ge,)
        return bwd

    return _finish("variance", (x,), xd.var(axis=axis), bwd_factory)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: need at least one input")
    datas = [p.data for p in parts]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum(sizes)[:-1]

    def bwd_factory():
        def bwd(g):
            return tuple(np.ascontiguousarray(piece)
                         for piece in np.split(g, offsets, axis=axis))
        return bwd

    return _finish("concat", tuple(parts), out, bwd_factory)


def scale(x: Tensor, s: float) -> Tensor:
    x = as_tensor(x)
    s = float(s)

    def bwd_factory():
        def bwd(g):
            return (s * g,)
        return bwd

    return _finish("scale", (x,), s * x.data, bwd_factory)


def narrow(x: Tensor, length: int) -> Tensor:
    """First `length` rows of x."""
    x = as_tensor(x)
    if not 0 <= length <= x.shape[0]:
        raise ShapeError(f"narrow: length {length} outside 0..{x.shape[0]}")
    shape = x.shape

    def bwd_factory():
        def bwd(g):
            full = np.zeros(shape)
            full[:length] = g
            return (full,)
        return bwd

    return _finish("narrow", (x,), x.data[:length].copy(), bwd_factory)


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Column slice x[:, start:stop] of a 2-D tensor."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"cols: need a 2-D input, got {x.shape}")
    if not 0 <= start <= stop <= x.shape[1]:
        raise ShapeError(f"cols: range {start}:{stop} outside width {x.shape[1]}")
    shape = x.shape

    def bwd_factory():
        def bwd(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            return (full,)
        return bwd

    return _finish("cols", (x,), x.data[:, start:stop].copy(), bwd_factory)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape

    def bwd_factory():
        def bwd(g):
            return (g.reshape(old),)
        return bwd

    return _finish("reshape", (x,), x.data.reshape(shape).copy(), bwd_factory)


def fourier(x: Tensor, num_bands: int) -> Tensor:
    """Sinusoidal encoding of (n, d) points; band k uses frequency
    2^k pi, emitting sines for every coordinate then cosines."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"fourier: need (n, d) input, got {x.shape}")
    if num_bands < 1:
        raise ShapeError(f"fourier: num_bands must be >= 1, got {num_bands}")
    xd = x.data
    nb = int(num_bands)

    def bwd_factory():
        def bwd(g):
            return (_backend.active.fourier_bwd(xd, nb, g),)
        return bwd

    return _finish("fourier", (x,), _backend.active.fourier_fwd(xd, nb), bwd_factory)


# Registry of every differentiable op kind; `apply_op` is the uniform
# dispatch surface used by the op-coverage gradient checks.
OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "affine": affine,
    "sine": sine,
    "sigmoid": sigmoid,
    "exp": exp,
    "square": square,
    "abs": absolute,
    "sum": sum_,
    "mean": mean,
    "variance": variance,
    "concat": concat,
    "scale": scale,
    "cols": cols,
    "narrow": narrow,
    "reshape": reshape,
    "fourier": fourier,
}


def apply_op(kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    if kind not in OPS:
        raise KeyError(f"unknown op kind {kind!r}; known: {sorted(OPS)}")
    if kind == "concat":
        return concat(list(inputs), **kwargs)
    return OPS[kind](*inputs, **kwargs)
