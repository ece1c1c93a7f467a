"""Dense float64 tensors and a minimal reverse-mode differentiation tape.

The primitive set is the closure needed by the toy two-stage models and the
disruption losses: affine maps, elementwise activations (tanh/relu/sigmoid),
reshape, concatenate, mean, squared difference, plus add/scale for residual
blocks and loss combination. Everything runs in 64-bit floats so gradients
can be validated tightly against central finite differences.

Recording is opt-in: ops consult a thread-local active tape and compute
plainly when none is active (used for frozen reference values). A tape is
never mutated by a backward pass, so it can be differentiated repeatedly.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import LineageError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "ParameterSet",
    "recording",
    "stop_recording",
    "active_tape",
    "forward_affine",
    "activation",
    "tanh",
    "relu",
    "sigmoid",
    "reshape",
    "concatenate",
    "mean",
    "squared_difference",
    "add",
    "scale",
    "mse_loss",
    "backward",
    "finite_difference_gradient",
    "sign",
    "l2_norm",
    "clip_range",
]

ACTIVATION_KINDS = ("tanh", "relu", "sigmoid")


class Tensor:
    """Immutable dense array of 64-bit floats in row-major order."""

    __slots__ = ("_data", "_tape")

    def __init__(self, data, shape: Sequence[int] | None = None):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if shape is not None:
            arr = arr.reshape(tuple(shape))
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        arr.flags.writeable = False
        self._data = arr
        self._tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: takes ownership of a freshly computed array.
        # np.asarray (not ascontiguousarray) so 0-d scalars keep shape ().
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        t._data = arr
        t._tape = None
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self._data.reshape(()))

    def tolist(self):
        return self._data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor._wrap(np.zeros(tuple(shape), dtype=np.float64))


def zeros_like(t: Tensor) -> Tensor:
    return Tensor._wrap(np.zeros(t.shape, dtype=np.float64))


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    forward_fn: Callable[..., np.ndarray]
    vjp_fn: Callable[[np.ndarray], tuple[np.ndarray, ...]]


class Tape:
    """Ordered record of primitive operations, in topological (creation) order.

    Backward passes accumulate gradients into a scratch dict keyed by tensor
    identity; the tape itself is never modified, so repeated calls on the
    same tape return identical gradients.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._known: set[int] = set()
        self._watched: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[_Record, ...]:
        return tuple(self._records)

    def watch(self, t: Tensor) -> Tensor:
        """Register a leaf tensor so it can be differentiated against."""
        self._known.add(id(t))
        self._watched.append(t)
        return t

    def knows(self, t: Tensor) -> bool:
        return id(t) in self._known

    def _record(self, op, inputs, output, forward_fn, vjp_fn):
        self._records.append(_Record(op, tuple(inputs), output, forward_fn, vjp_fn))
        for t in inputs:
            self._known.add(id(t))
        self._known.add(id(output))
        output._tape = self

    def activate(self):
        """Context manager making this tape the recording target in this thread."""
        return recording(self)

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded op, propagating recomputed values forward.

        Returns the replayed output array per record; each must equal the
        recorded output bitwise for the tape to be a faithful trace.
        """
        values: dict[int, np.ndarray] = {}
        out = []
        for rec in self._records:
            ins = [values.get(id(t), t.data) for t in rec.inputs]
            arr = np.asarray(rec.forward_fn(*ins), dtype=np.float64)
            values[id(rec.output)] = arr
            out.append(arr)
        return out

    def gradient(self, loss: Tensor, wrt: Tensor) -> Tensor:
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        if id(wrt) not in self._known:
            raise LineageError("requested tensor was never recorded on this tape")
        if id(loss) not in self._known:
            raise LineageError("loss tensor was never recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=np.float64)}
        for rec in reversed(self._records):
            g_out = grads.get(id(rec.output))
            if g_out is None:
                continue
            for t, g in zip(rec.inputs, rec.vjp_fn(g_out)):
                if g is None:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = g if acc is None else acc + g
        g = grads.get(id(wrt))
        if g is None:
            return zeros_like(wrt)
        return Tensor._wrap(g.reshape(wrt.shape))


_ACTIVE = threading.local()


def _stack() -> list:
    s = getattr(_ACTIVE, "stack", None)
    if s is None:
        s = _ACTIVE.stack = []
    return s


def active_tape() -> Tape | None:
    s = _stack()
    return s[-1] if s else None


@contextmanager
def recording(tape: Tape):
    s = _stack()
    s.append(tape)
    try:
        yield tape
    finally:
        s.pop()


@contextmanager
def stop_recording():
    """Suspend recording, e.g. while computing frozen reference values."""
    s = _stack()
    s.append(None)
    try:
        yield
    finally:
        s.pop()


def _emit(op, inputs, out_arr, forward_fn, vjp_fn) -> Tensor:
    out = Tensor._wrap(out_arr)
    tape = active_tape()
    if tape is not None:
        tape._record(op, inputs, out, forward_fn, vjp_fn)
    return out


# ---------------------------------------------------------------------------
# Differentiable primitives
# ---------------------------------------------------------------------------


def forward_affine(input: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """weights @ input + bias over the last axis of ``input``.

    ``weights`` is [out, in], ``bias`` is [out]; leading axes of ``input``
    are preserved.
    """
    w, b = weights.data, bias.data
    if w.ndim != 2:
        raise ShapeError(f"affine weights must be rank 2, got shape {weights.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"affine bias shape {bias.shape} does not match weights {weights.shape}")
    if input.data.ndim < 1 or input.shape[-1] != w.shape[1]:
        raise ShapeError(
            f"affine input shape {input.shape} does not match weights {weights.shape}"
        )
    n_in = w.shape[1]
    n_out = w.shape[0]
    out_shape = input.shape[:-1] + (n_out,)
    y = (input.data.reshape(-1, n_in) @ w.T + b).reshape(out_shape)
    x_saved = input.data

    def vjp(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ w).reshape(x_saved.shape)
        gw = g2.T @ x_saved.reshape(-1, n_in)
        gb = g2.sum(axis=0)
        return gx, gw, gb

    def fwd_shaped(x, wv, bv):
        return (x.reshape(-1, n_in) @ wv.T + bv).reshape(out_shape)

    return _emit("affine", (input, weights, bias), y, fwd_shaped, vjp)


def activation(input: Tensor, kind: str) -> Tensor:
    """Elementwise tanh / relu / sigmoid.

    relu uses subgradient 0 at the origin; sigmoid is computed in its
    numerically stable split form so large inputs stay finite.
    """
    if kind not in ACTIVATION_KINDS:
        raise ValueError(f"unsupported activation kind {kind!r}; expected one of {ACTIVATION_KINDS}")
    x = input.data
    if kind == "tanh":
        y = np.tanh(x)
        fwd = np.tanh
        def vjp(g, y=y):
            return (g * (1.0 - y * y),)
    elif kind == "relu":
        y = np.maximum(x, 0.0)
        fwd = lambda a: np.maximum(a, 0.0)
        mask = x > 0.0
        def vjp(g, mask=mask):
            return (g * mask,)
    else:
        y = _stable_sigmoid(x)
        fwd = _stable_sigmoid
        def vjp(g, y=y):
            return (g * y * (1.0 - y),)
    return _emit(kind, (input,), y, fwd, vjp)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(t: Tensor) -> Tensor:
    return activation(t, "tanh")


def relu(t: Tensor) -> Tensor:
    return activation(t, "relu")


def sigmoid(t: Tensor) -> Tensor:
    return activation(t, "sigmoid")


def reshape(input: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != input.size:
        raise ShapeError(f"cannot reshape {input.shape} to {shape}")
    old_shape = input.shape

    def vjp(g):
        return (g.reshape(old_shape),)

    return _emit("reshape", (input,), input.data.reshape(shape),
                 lambda x: x.reshape(shape), vjp)


def concatenate(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concatenate needs at least one tensor")
    arrs = [p.data for p in parts]
    y = np.concatenate(arrs, axis=axis)
    sizes = [a.shape[axis] for a in arrs]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit("concat", tuple(parts), y,
                 lambda *xs: np.concatenate(xs, axis=axis), vjp)


def mean(input: Tensor) -> Tensor:
    """Mean over all elements; returns a scalar (shape ``()``) tensor."""
    n = input.size
    shape = input.shape

    def vjp(g):
        gs = float(np.asarray(g).reshape(()))
        return (np.full(shape, gs / n, dtype=np.float64),)

    return _emit("mean", (input,), np.mean(input.data),
                 lambda x: np.mean(x), vjp)


def squared_difference(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"squared_difference shapes differ: {a.shape} vs {b.shape}")
    d = a.data - b.data

    def vjp(g, d=d):
        gd = 2.0 * d * g
        return gd, -gd

    return _emit("sqdiff", (a, b), d * d, lambda x, y: (x - y) ** 2, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")

    def vjp(g):
        return g, g

    return _emit("add", (a, b), a.data + b.data, lambda x, y: x + y, vjp)


def scale(input: Tensor, factor: float) -> Tensor:
    c = float(factor)

    def vjp(g):
        return (c * g,)

    return _emit("scale", (input,), c * input.data, lambda x: c * x, vjp)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared elementwise differences, as a scalar tensor."""
    if a.shape != b.shape:
        raise ShapeError(f"mse_loss shapes differ: {a.shape} vs {b.shape}")
    return mean(squared_difference(a, b))


def backward(loss: Tensor, wrt: Tensor) -> Tensor:
    """Gradient of a recorded scalar ``loss`` with respect to ``wrt``.

    The tape is discovered from the loss tensor and left untouched, so it
    can be differentiated again (also against other tensors).
    """
    tape = loss._tape
    if tape is None:
        raise LineageError("loss tensor was not produced under an active tape")
    return tape.gradient(loss, wrt)


# ---------------------------------------------------------------------------
# Untaped utilities
# ---------------------------------------------------------------------------


def finite_difference_gradient(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient estimate of a tensor-to-scalar function."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    flat = x.data.reshape(-1).copy()
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _as_float(f(Tensor._wrap(flat.reshape(x.shape).copy())))
        flat[i] = orig - h
        fm = _as_float(f(Tensor._wrap(flat.reshape(x.shape).copy())))
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return Tensor._wrap(g.reshape(x.shape))


def _as_float(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


def sign(input: Tensor) -> Tensor:
    """Elementwise sign with sign(0) = 0."""
    return Tensor._wrap(np.sign(input.data))


def l2_norm(input: Tensor) -> float:
    """Euclidean norm over all elements."""
    return float(np.sqrt(np.sum(input.data * input.data)))


def clip_range(input: Tensor, lo: Tensor, hi: Tensor) -> Tensor:
    """Elementwise clamp of ``input`` to [lo, hi]."""
    if lo.shape != input.shape or hi.shape != input.shape:
        raise ShapeError(
            f"clip_range shapes differ: input {input.shape}, lo {lo.shape}, hi {hi.shape}"
        )
    if np.any(lo.data > hi.data):
        raise ValueError("clip_range requires lo <= hi elementwise")
    return Tensor._wrap(np.clip(input.data, lo.data, hi.data))


# ---------------------------------------------------------------------------
# Parameter storage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterSet:
    """Named, immutable collection of tensors with the seed that produced them."""

    seed: int
    tensors: Mapping[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> tuple[str, ...]:
        return tuple(self.tensors.keys())

    @property
    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def equals(self, other: "ParameterSet") -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[n].data, other[n].data) for n in self.names())
