"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that can affect a gradient records an entry on a global
tape.  An entry stores the output tensor, the input tensors and a closure
that maps the output adjoint to one adjoint per input.  ``backward`` walks
the tape once, in reverse, which is a valid topological order because
entries are appended at execution time.

The tape is rebuilt per forward pass: callers (the trainer, grad_check)
clear it between passes.  Repeated ``backward`` calls without clearing the
parameter gradients accumulate into ``Tensor.grad``; use ``zero_grad`` or
set ``grad = None`` between optimizer steps.

Single-threaded by design: the tape is module-global state.  Tensors that
are no longer being recorded (inference under ``no_grad``) are immutable
and safe to share.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tape",
    "no_grad",
    "matmul",
    "transpose",
    "softmax_rows",
    "add",
    "sub",
    "mul",
    "neg",
    "one_minus",
    "sigmoid",
    "tanh",
    "log",
    "concat",
    "stack_rows",
    "row",
    "gather_rows",
    "add_rowvec",
    "pick",
    "scale",
    "sum_all",
    "dropout",
    "backward",
    "grad_check",
]


class Tensor:
    """A dense float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar used by tests and small expressions
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Tape:
    """Ordered op record: (output, inputs, adjoint_fn, kind) per entry.

    Entries are appended in execution order, so inputs always precede the
    entries that consume them and one reverse sweep visits each entry
    exactly once.
    """

    __slots__ = ("entries", "_tracked")

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable, str]] = []
        self._tracked: set[int] = set()

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()
        self._tracked.clear()

    def is_tracked(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], adjoint: Callable, kind: str) -> None:
        self.entries.append((out, inputs, adjoint, kind))
        self._tracked.add(id(out))


_TAPE = Tape()
_GRAD_ENABLED = True


def tape() -> Tape:
    """The process-wide active tape."""
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / numeric diff)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _maybe_record(out: Tensor, inputs: tuple[Tensor, ...], adjoint: Callable, kind: str) -> None:
    if _GRAD_ENABLED and any(_TAPE.is_tracked(t) for t in inputs):
        _TAPE.record(out, inputs, adjoint, kind)


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def adjoint(g):
        return g @ bd.T, ad.T @ g

    _maybe_record(out, (a, b), adjoint, "matmul")
    return out


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got shape {x.shape}")
    out = Tensor(x.data.T.copy())

    def adjoint(g):
        return (g.T,)

    _maybe_record(out, (x,), adjoint, "transpose")
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax, computed with max subtraction so large logits stay finite."""
    z = x.data
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def adjoint(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    _maybe_record(out, (x,), adjoint, "softmax_rows")
    return out


def _binary_check(a: Tensor, b: Tensor, kind: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{kind} operand shapes differ: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "add")
    out = Tensor(a.data + b.data)

    def adjoint(g):
        return g, g

    _maybe_record(out, (a, b), adjoint, "add")
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "sub")
    out = Tensor(a.data - b.data)

    def adjoint(g):
        return g, -g

    _maybe_record(out, (a, b), adjoint, "sub")
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def adjoint(g):
        return g * bd, g * ad

    _maybe_record(out, (a, b), adjoint, "mul")
    return out


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)

    def adjoint(g):
        return (-g,)

    _maybe_record(out, (x,), adjoint, "neg")
    return out


def one_minus(x: Tensor) -> Tensor:
    """1 - x elementwise (gate complement, BCE complement)."""
    out = Tensor(1.0 - x.data)

    def adjoint(g):
        return (-g,)

    _maybe_record(out, (x,), adjoint, "one_minus")
    return out


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    out = Tensor(y)

    def adjoint(g):
        return (g * y * (1.0 - y),)

    _maybe_record(out, (x,), adjoint, "sigmoid")
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)

    def adjoint(g):
        return (g * (1.0 - y * y),)

    _maybe_record(out, (x,), adjoint, "tanh")
    return out


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise ValueError("log domain error: input has non-positive entries")
    out = Tensor(np.log(x.data))
    xd = x.data

    def adjoint(g):
        return (g / xd,)

    _maybe_record(out, (x,), adjoint, "log")
    return out


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if a.ndim != b.ndim:
        raise ValueError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    for d in range(a.ndim):
        if d != axis and a.shape[d] != b.shape[d]:
            raise ValueError(f"concat shapes incompatible on axis {axis}: {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=axis))
    k = a.shape[axis]

    def adjoint(g):
        ga, gb = np.split(g, [k], axis=axis)
        return ga, gb

    _maybe_record(out, (a, b), adjoint, "concat")
    return out


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 0 in one tape entry; used to assemble sequences."""
    if not parts:
        raise ValueError("stack_rows needs at least one part")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def adjoint(g):
        return tuple(np.split(g, offsets, axis=0))

    _maybe_record(out, tuple(parts), adjoint, "stack_rows")
    return out


def row(x: Tensor, i: int) -> Tensor:
    """Select row i of a 2-d tensor as a [1 x d] tensor."""
    if not 0 <= i < x.shape[0]:
        raise IndexError(f"row {i} out of range for shape {x.shape}")
    out = Tensor(x.data[i : i + 1].copy())

    def adjoint(g):
        buf = np.zeros_like(x.data)
        buf[i : i + 1] = g
        return (buf,)

    _maybe_record(out, (x,), adjoint, "row")
    return out


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup; backward scatter-adds into the table gradient."""
    idx = np.asarray(list(ids), dtype=np.intp)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = int(idx[(idx < 0) | (idx >= n)][0])
        raise IndexError(f"row id {bad} out of range [0, {n})")
    out = Tensor(table.data[idx] if idx.size else np.zeros((0, table.shape[1])))

    def adjoint(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        return (buf,)

    _maybe_record(out, (table,), adjoint, "gather_rows")
    return out


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """Add a [1 x n] row vector to every row of an [m x n] tensor (bias add)."""
    if x.ndim != 2 or b.shape != (1, x.shape[1]):
        raise ValueError(f"add_rowvec shapes incompatible: {x.shape} + {b.shape}")
    out = Tensor(x.data + b.data)

    def adjoint(g):
        return g, g.sum(axis=0, keepdims=True)

    _maybe_record(out, (x, b), adjoint, "add_rowvec")
    return out


def pick(x: Tensor, j: int) -> Tensor:
    """Entry j of a [1 x n] row vector as a [1 x 1] tensor."""
    if x.ndim != 2 or x.shape[0] != 1:
        raise ValueError(f"pick expects a [1 x n] tensor, got {x.shape}")
    if not 0 <= j < x.shape[1]:
        raise IndexError(f"pick index {j} out of range for {x.shape}")
    out = Tensor([[x.data[0, j]]])

    def adjoint(g):
        buf = np.zeros_like(x.data)
        buf[0, j] = g[0, 0]
        return (buf,)

    _maybe_record(out, (x,), adjoint, "pick")
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)

    def adjoint(g):
        return (g * c,)

    _maybe_record(out, (x,), adjoint, "scale")
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor([[x.data.sum()]])
    shp = x.shape

    def adjoint(g):
        return (np.full(shp, g[0, 0]),)

    _maybe_record(out, (x,), adjoint, "sum_all")
    return out


def dropout(x: Tensor, ratio: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ratio, scale survivors by 1/(1-ratio).

    Evaluation mode (and ratio 0) is an exact identity and consumes no
    randomness, which keeps rng streams aligned between train and eval.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not training or ratio == 0.0:
        return x
    mask = (rng.random(x.shape) >= ratio) / (1.0 - ratio)
    out = Tensor(x.data * mask)

    def adjoint(g):
        return (g * mask,)

    _maybe_record(out, (x,), adjoint, "dropout")
    return out


# ---------------------------------------------------------------------------
# reverse sweep


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor the loss depends on.

    The loss must be scalar (one element) and recorded on the tape.
    Gradients accumulate across calls until cleared.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not _TAPE.is_tracked(loss):
        raise ValueError("backward: loss is not on the tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, adjoint, _kind in reversed(_TAPE.entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, adjoint(g)):
            if gi is None:
                continue
            if t.requires_grad:
                if t.grad is None:
                    t.grad = gi.copy()
                else:
                    t.grad += gi
            if id(t) in _TAPE._tracked:
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Compare analytic and central-difference gradients of a scalar function.

    Returns the max elementwise relative error with denominator
    max(|analytic|, |numeric|, 1e-8).  f must be deterministic: any
    randomness (dropout masks) has to be replayed identically per call.
    """
    if h <= 0:
        raise ValueError("grad_check step h must be positive")
    x.requires_grad = True
    x.grad = None
    _TAPE.clear()
    out = f(x)
    if out.size != 1:
        raise ValueError("grad_check expects a scalar-valued function")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    _TAPE.clear()

    numeric = np.empty_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    return float(rel.max()) if rel.size else 0.0
