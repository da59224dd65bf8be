"""Minimal reverse-mode autodiff over dense float64 tensors.

A dynamic tape records every primitive applied to tensors that (transitively)
require gradients. ``backward`` walks the tape once in reverse creation order,
which is already a topological order, and accumulates gradients into the
leaves. Rebuilt every iteration; no graph reuse, no higher-order derivatives.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_EPS_NORM = 1e-30  # additive guard inside sqrt for vector normalization


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class NumericError(ArithmeticError):
    """Non-finite value where a finite one is required."""


_state = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


class Tape:
    """Ordered record of primitive ops; context manager activates it."""

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = None

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: "Tensor", parents: tuple["Tensor", ...], bwd: Callable) -> None:
        self._nodes.append((out, parents, bwd))

    def backward(self, loss: "Tensor") -> dict["Tensor", np.ndarray]:
        """Accumulate d loss / d leaf for every requires_grad leaf.

        The loss must be scalar. Returns the gradient map and also stores each
        leaf's gradient on ``leaf.grad``. The tape is reset afterwards.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaf_grads: dict[Tensor, np.ndarray] = {}
        for out, parents, bwd in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, bwd(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = pg if pg.flags.writeable else pg.copy()
                else:
                    acc += pg
        # whatever gradient remains belongs to leaves
        for out, parents, _ in self._nodes:
            for p in parents:
                if p.is_leaf and p.requires_grad and id(p) in grads and p not in leaf_grads:
                    leaf_grads[p] = grads[id(p)]
        if loss.is_leaf and loss.requires_grad:
            leaf_grads[loss] = np.ones_like(loss.data)
        for leaf, g in leaf_grads.items():
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        self._nodes.clear()
        return leaf_grads


class Tensor:
    """Dense float64 array plus grad metadata. Row-major storage."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar -----------------------------------------------------
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

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _apply(parents: Sequence, forward: Callable, backward: Callable) -> Tensor:
    """Run a primitive: compute forward, register on the active tape."""
    parents = tuple(as_tensor(p) for p in parents)
    out = Tensor(forward(*[p.data for p in parents]))
    out.requires_grad = any(p.requires_grad for p in parents)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        out.is_leaf = False
        tape._record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    return _apply(
        (a, b),
        lambda x, y: x + y,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    return _apply(
        (a, b),
        lambda x, y: x - y,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    return _apply(
        (a, b),
        lambda x, y: x * y,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    return _apply(
        (a, b),
        lambda x, y: x / y,
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _apply((a,), lambda x: -x, lambda g: (-g,))


def pow_const(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _apply(
        (a,),
        lambda x: x**exponent,
        lambda g: (g * exponent * a.data ** (exponent - 1),),
    )


# -- transcendental --------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _apply((a,), np.exp, lambda g: (g * out.data,))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return _apply((a,), np.log, lambda g: (g / a.data,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _apply((a,), np.sin, lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _apply((a,), np.cos, lambda g: (-g * np.sin(a.data),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = _apply((a,), np.sqrt, lambda g: (g * 0.5 / out.data,))
    return out


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _apply((a,), np.abs, lambda g: (g * np.sign(a.data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _apply(
        (a,),
        lambda x: 0.5 * (np.tanh(0.5 * x) + 1.0),
        lambda g: (g * out.data * (1.0 - out.data),),
    )
    return out


def softplus(a) -> Tensor:
    # log(1 + e^x), evaluated stably for large |x|
    a = as_tensor(a)
    return _apply(
        (a,),
        lambda x: np.logaddexp(0.0, x),
        lambda g: (g * 0.5 * (np.tanh(0.5 * a.data) + 1.0),),
    )


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _apply((a,), lambda x: np.maximum(x, 0.0), lambda g: (g * (a.data > 0.0),))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    return _apply(
        (a,),
        lambda x: np.where(x > 0.0, x, slope * x),
        lambda g: (g * np.where(a.data > 0.0, 1.0, slope),),
    )


def maximum_const(a, lo: float) -> Tensor:
    """max(a, lo); gradient passes where a > lo (clamp-below)."""
    a = as_tensor(a)
    return _apply((a,), lambda x: np.maximum(x, lo), lambda g: (g * (a.data > lo),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    return _apply(
        (a,),
        lambda x: np.clip(x, lo, hi),
        lambda g: (g * ((a.data > lo) & (a.data < hi)),),
    )


# -- reductions ------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _apply((a,), lambda x: x.sum(axis=axis, keepdims=keepdims), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) / float(n)


def cumsum_exclusive(a, axis: int = -1) -> Tensor:
    """out[..., i] = sum of a[..., :i] along axis (first entry zero)."""
    a = as_tensor(a)
    ax = axis if axis >= 0 else a.ndim + axis

    def fwd(x):
        out = np.zeros_like(x)
        sl_out = [slice(None)] * x.ndim
        sl_in = [slice(None)] * x.ndim
        sl_out[ax] = slice(1, None)
        sl_in[ax] = slice(None, -1)
        out[tuple(sl_out)] = np.cumsum(x, axis=ax)[tuple(sl_in)]
        return out

    def bwd(g):
        # adjoint: reversed exclusive cumsum
        rev = np.flip(g, axis=ax)
        return (np.flip(fwd(rev), axis=ax),)

    return _apply((a,), fwd, bwd)


# -- shape manipulation ----------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    return _apply(
        (a,),
        lambda x: x.reshape(shape),
        lambda g: (g.reshape(a.shape),),
    )


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    return _apply(
        (a,),
        lambda x: np.broadcast_to(x, shape).copy(),
        lambda g: (_unbroadcast(g, a.shape),),
    )


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _apply(
        (a,),
        lambda x: np.swapaxes(x, ax1, ax2).copy(),
        lambda g: (np.swapaxes(g, ax1, ax2),),
    )


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(chunk) for chunk in np.split(g, splits, axis=axis))

    return _apply(parts, lambda *xs: np.concatenate(xs, axis=axis), bwd)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]

    def bwd(g):
        return tuple(np.ascontiguousarray(np.take(g, i, axis=axis)) for i in range(len(parts)))

    return _apply(parts, lambda *xs: np.stack(xs, axis=axis), bwd)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    if isinstance(key, Tensor):
        key = key.data.astype(np.int64)

    def bwd(g):
        out = np.zeros(a.shape)
        np.add.at(out, key, g)
        return (out,)

    return _apply((a,), lambda x: x[key].copy() if isinstance(key, np.ndarray) else np.array(x[key], copy=True), bwd)


def gather_rows(a, idx) -> Tensor:
    """a[idx] for an integer index array; adjoint scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _apply((a,), lambda x: x[idx], bwd)


def scatter_rows(n_rows: int, idx, values) -> Tensor:
    """Zero array of n_rows rows with values added at idx (adjoint of gather)."""
    values = as_tensor(values)
    idx = np.asarray(idx, dtype=np.int64)

    def fwd(v):
        out = np.zeros((n_rows,) + v.shape[1:])
        np.add.at(out, idx, v)
        return out

    return _apply((values,), fwd, lambda g: (g[idx],))


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _apply((a, b), lambda x, y: x @ y, bwd)


def matinv3(a, cond_limit: float = 1e6) -> Tensor:
    """Batched 3x3 inverse.

    Ill-conditioned entries (estimated cond > cond_limit) are replaced by the
    transpose of the orthonormalized block and treated as constants in the
    backward pass. The conditioning probe uses |det| against the cubed scale
    so the common well-conditioned case costs one det + one inv.
    """
    a = as_tensor(a)
    if a.shape[-2:] != (3, 3):
        raise ShapeError(f"matinv3 expects (...,3,3), got {a.shape}")
    mats = a.data
    det = np.linalg.det(mats)
    scale = np.sqrt((mats * mats).sum(axis=(-1, -2)) / 3.0)
    bad = np.abs(det) < (scale**3) / cond_limit + 1e-300
    if np.any(bad):
        safe = mats.copy()
        u, _, vt = np.linalg.svd(mats[bad])
        safe[bad] = u @ vt  # nearest rotation
        inv = np.linalg.inv(safe)
    else:
        inv = np.linalg.inv(mats)
    good = ~bad

    def bwd(g):
        # d(A^-1) adjoint: -A^-T g A^-T, zeroed where the fallback fired
        it = np.swapaxes(inv, -1, -2)
        ga = -it @ g @ it
        if np.any(bad):
            ga = ga * good[..., None, None]
        return (ga,)

    return _apply((a,), lambda x: inv, bwd)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def fwd(x):
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)

    out = _apply(
        (a,),
        fwd,
        lambda g: ((g - (g * out.data).sum(axis=axis, keepdims=True)) * out.data,),
    )
    return out


def vector_norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm with a tiny additive guard so the gradient at 0 is 0."""
    return sqrt(tsum(mul(a, a), axis=axis, keepdims=keepdims) + _EPS_NORM)


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    tape = _active_tape()
    if tape is None or len(tape) == 0:
        raise RuntimeError("backward called with no active, non-empty tape")
    return tape.backward(loss)


def gradcheck(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    Error metric per coordinate: |analytic - numeric| / max(1, |numeric|).
    """
    x = as_tensor(x)
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        grads = tape.backward(y)
    analytic = grads.get(probe)
    if analytic is None:
        analytic = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(probe.data)).data)
        flat[i] = orig - h
        fm = float(f(Tensor(probe.data)).data)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)
        if not np.isfinite(numeric[i]):
            raise NumericError(f"non-finite numeric derivative at coordinate {i}")
    analytic = analytic.reshape(-1)
    if not np.all(np.isfinite(analytic)):
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NumericError(f"non-finite analytic derivative at coordinate {bad}")
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
