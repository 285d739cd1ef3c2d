"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every function here computes a plain numpy forward value and, when a Tape is
active and some input carries ``requires_grad``, appends a backward closure to
that tape. Running the tape in reverse order accumulates gradients into every
leaf tensor that was touched. All values are checked for finiteness after each
forward operation; NaN or Inf raises immediately instead of propagating.

Single tape, single thread: a tape must only be written and replayed by the
thread that owns it. Tensors themselves are safe to share read-only.
"""

from __future__ import annotations

import builtins
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericError(ArithmeticError):
    """A forward value or a gradient became NaN or infinite."""


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

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
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def accumulate(self, g: np.ndarray) -> None:
        """Add an incoming gradient contribution (allocates the buffer lazily)."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; definitions follow the op functions below
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


_LOCAL = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = []
        _LOCAL.tapes = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed operations for one forward/backward pass."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _tape_stack().pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted: exited a tape that is not innermost")
        return False

    def record(self, fn: Callable[[], None]) -> None:
        self._ops.append(fn)

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, output: Tensor, seed: float = 1.0) -> None:
        """Seed the scalar output gradient and replay recorded ops in reverse."""
        if output.data.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
        if not np.isfinite(output.data).all():
            raise NumericError("backward from a non-finite output")
        output.accumulate(np.full_like(output.data, seed))
        for fn in reversed(self._ops):
            fn()


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")


def _emit(data: np.ndarray, op: str, inputs: tuple[Tensor, ...],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    """Create the output node; record the backward closure if anyone listens."""
    _finite(data, op)
    tape = active_tape()
    if tape is not None and builtins.any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)

        def run():
            g = out.grad
            if g is not None:
                backward(g)

        tape.record(run)
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _norm_axis(axis: int, ndim: int) -> int:
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return ax


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _emit(data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return _emit(data, "sub", (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(-g)

    return _emit(-a.data, "neg", (a,), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _emit(data, "mul", (a, b), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _emit(data, "matmul", (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``y[..., j] = sum_i x[..., i] w[i, j] + b[j]``."""
    x, weight = _wrap(x), _wrap(weight)
    if weight.ndim != 2:
        raise ShapeError(f"linear weight must be 2-d, got {weight.shape}")
    if x.ndim < 1 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    din, dout = weight.shape
    x2 = x.data.reshape(-1, din)
    y2 = x2 @ weight.data
    inputs: tuple[Tensor, ...]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (dout,):
            raise ShapeError(f"linear bias {bias.shape} does not match output width {dout}")
        y2 = y2 + bias.data
        inputs = (x, weight, bias)
    else:
        inputs = (x, weight)
    data = y2.reshape(x.shape[:-1] + (dout,))

    def backward(g):
        g2 = g.reshape(-1, dout)
        if x.requires_grad:
            x.accumulate((g2 @ weight.data.T).reshape(x.data.shape))
        if weight.requires_grad:
            weight.accumulate(x2.T @ g2)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=0))

    return _emit(data, "linear", inputs, backward)


# ---------------------------------------------------------------------------
# shape manipulation


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    ts = [_wrap(p) for p in parts]
    if not ts:
        raise ShapeError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in ts], axis=axis)
    ax = _norm_axis(axis, data.ndim)
    sizes = [t.shape[ax] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, s0, s1 in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(int(s0), int(s1))
                t.accumulate(g[tuple(sl)])

    return _emit(data, "concat", tuple(ts), backward)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(p) for p in parts]
    if not ts:
        raise ShapeError("stack needs at least one tensor")
    data = np.stack([t.data for t in ts], axis=axis)
    ax = _norm_axis(axis, data.ndim)

    def backward(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t.accumulate(np.take(g, i, axis=ax))

    return _emit(data, "stack", tuple(ts), backward)


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g.reshape(x.data.shape))

    return _emit(data, "reshape", (x,), backward)


def broadcast_to(x, shape) -> Tensor:
    x = _wrap(x)
    data = np.ascontiguousarray(np.broadcast_to(x.data, shape))

    def backward(g):
        if x.requires_grad:
            x.accumulate(_unbroadcast(g, x.data.shape))

    return _emit(data, "broadcast_to", (x,), backward)


def take(x, index: int, axis: int = 0) -> Tensor:
    """Select one slice along ``axis``; that axis disappears from the output."""
    x = _wrap(x)
    ax = _norm_axis(axis, x.ndim)
    index = int(index)
    if not 0 <= index < x.shape[ax]:
        raise ShapeError(f"take index {index} out of range for axis {axis} of {x.shape}")
    data = np.take(x.data, index, axis=ax)

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            sl = [slice(None)] * x.ndim
            sl[ax] = index
            gx[tuple(sl)] = g
            x.accumulate(gx)

    return _emit(data, "take", (x,), backward)


def slice_along(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along ``axis``; the axis is kept."""
    x = _wrap(x)
    ax = _norm_axis(axis, x.ndim)
    if not (0 <= start < stop <= x.shape[ax]):
        raise ShapeError(f"slice [{start}:{stop}) invalid for axis {axis} of {x.shape}")
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(start, stop)
    data = x.data[tuple(sl)].copy()

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[tuple(sl)] = g
            x.accumulate(gx)

    return _emit(data, "slice_along", (x,), backward)


def pad_axis(x, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad along one axis."""
    x = _wrap(x)
    ax = _norm_axis(axis, x.ndim)
    if before < 0 or after < 0:
        raise ShapeError("pad extents must be non-negative")
    widths = [(0, 0)] * x.ndim
    widths[ax] = (before, after)
    data = np.pad(x.data, widths)
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(before, before + x.shape[ax])

    def backward(g):
        if x.requires_grad:
            x.accumulate(g[tuple(sl)])

    return _emit(data, "pad_axis", (x,), backward)


# ---------------------------------------------------------------------------
# reductions


def _expand_reduced(g: np.ndarray, axis, keepdims: bool) -> np.ndarray:
    if keepdims or axis is None:
        return g
    return np.expand_dims(g, axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - numpy-style name
    x = _wrap(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if x.requires_grad:
            gg = _expand_reduced(g, axis, keepdims)
            x.accumulate(np.broadcast_to(gg, x.data.shape))

    return _emit(np.asarray(data), "sum", (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.size // max(data.size, 1)

    def backward(g):
        if x.requires_grad:
            gg = _expand_reduced(g, axis, keepdims) / count
            x.accumulate(np.broadcast_to(gg, x.data.shape))

    return _emit(np.asarray(data), "mean", (x,), backward)


def amax(x, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; gradient routes to the first argmax entry."""
    x = _wrap(x)
    ax = _norm_axis(axis, x.ndim)
    data = x.data.max(axis=ax, keepdims=keepdims)
    idx = np.argmax(x.data, axis=ax)

    def backward(g):
        if x.requires_grad:
            gg = g if keepdims else np.expand_dims(g, ax)
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, np.expand_dims(idx, ax), gg, axis=ax)
            x.accumulate(gx)

    return _emit(np.asarray(data), "amax", (x,), backward)


def cumsum(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    ax = _norm_axis(axis, x.ndim)
    data = np.cumsum(x.data, axis=ax)

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.flip(np.cumsum(np.flip(g, ax), axis=ax), ax))

    return _emit(data, "cumsum", (x,), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x) -> Tensor:
    x = _wrap(x)
    data = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * (x.data > 0.0))

    return _emit(data, "relu", (x,), backward)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = _wrap(x)
    data = np.where(x.data >= 0.0, x.data, slope * x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * np.where(x.data >= 0.0, 1.0, slope))

    return _emit(data, "leaky_relu", (x,), backward)


def tanh(x) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * (1.0 - y * y))

    return _emit(y, "tanh", (x,), backward)


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    z = x.data
    y = np.empty_like(z)
    pos = z >= 0.0
    y[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    y[~pos] = ez / (1.0 + ez)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * y * (1.0 - y))

    return _emit(y, "sigmoid", (x,), backward)


def softmax(x, mask=None) -> Tensor:
    """Softmax over the last axis; masked entries are exactly zero.

    ``mask`` is a boolean array broadcastable to ``x``. Every row must keep at
    least one unmasked entry; the normalization and the backward pass both see
    only the unmasked entries, so masked positions get exactly zero output and
    exactly zero input gradient.
    """
    x = _wrap(x)
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not m.any(axis=-1).all():
            raise ShapeError("softmax: some row has every entry masked")
        shifted = np.where(m, x.data, -np.inf)
        mx = shifted.max(axis=-1, keepdims=True)
        e = np.where(m, np.exp(np.where(m, x.data - mx, 0.0)), 0.0)
    else:
        mx = x.data.max(axis=-1, keepdims=True)
        e = np.exp(x.data - mx)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            x.accumulate(y * (g - dot))

    return _emit(y, "softmax", (x,), backward)


def cross_entropy(logits, label: int) -> Tensor:
    """Negative log-probability of ``label`` under softmax(logits), computed stably."""
    logits = _wrap(logits)
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy expects a 1-d logit vector, got {logits.shape}")
    k = logits.shape[0]
    label = int(label)
    if not 0 <= label < k:
        raise ValueError(f"label {label} outside [0, {k})")
    z = logits.data
    mx = z.max()
    ez = np.exp(z - mx)
    data = np.asarray(mx + np.log(ez.sum()) - z[label])

    def backward(g):
        if logits.requires_grad:
            p = ez / ez.sum()
            p = p.copy()
            p[label] -= 1.0
            logits.accumulate(g * p)

    return _emit(data, "cross_entropy", (logits,), backward)


def grad_scale(x, factor: float) -> Tensor:
    """Identity forward, gradient multiplied by ``factor`` on the way back.

    Exists as a negative control for gradient checking: wrapping any
    subexpression with ``factor != 1`` must make grad_check fail.
    """
    x = _wrap(x)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * factor)

    return _emit(x.data.copy(), "grad_scale", (x,), backward)


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Named learnable tensors, each with a same-shape gradient accumulator."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad[...] = 0.0

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, t in self._params.items():
            c = clone.add(name, t.data.copy())
            c.grad[...] = t.grad
        return clone

    def num_values(self) -> int:
        return builtins.sum(t.size for t in self._params.values())


def scaled_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    passed: bool
    tol: float
    step: float
    max_rel_err: float
    worst: str
    per_param: dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"grad_check {status}: max rel err {self.max_rel_err:.3e} at {self.worst} "
                f"(tol {self.tol:g}, step {self.step:g})")


def _scalar_eval(f, store: "ParamStore") -> float:
    out = f(store)
    v = out.item() if isinstance(out, Tensor) else float(out)
    if not np.isfinite(v):
        raise NumericError("grad_check objective is not finite")
    return v


def grad_check(f, store: ParamStore, step: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-8) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f(store)`` against central differences.

    Perturbs every entry of every parameter by +/- ``step`` and compares the
    symmetric difference quotient with the taped gradient. The relative error
    denominator is floored at ``floor`` so near-zero gradients do not blow up
    the ratio; raise the floor toward 1e-6 for deep compositions, where the
    difference quotient itself carries roundoff noise around 1e-10 * |f| and
    gradients below that are not measurable at this step size. ``f`` must be
    deterministic.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    store.zero_grads()
    tape = Tape()
    with tape:
        out = f(store)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ShapeError("grad_check objective must return a scalar Tensor")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check objective is not finite")
    tape.backward(out)
    analytic = {name: t.grad.copy() for name, t in store.items()}

    per_param: dict[str, float] = {}
    worst_name, worst_err = "", 0.0
    for name, t in store.items():
        flat = t.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        pmax = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            fp = _scalar_eval(f, store)
            flat[i] = keep - step
            fm = _scalar_eval(f, store)
            flat[i] = keep
            numeric = (fp - fm) / (2.0 * step)
            a = aflat[i]
            err = abs(a - numeric) / builtins.max(abs(a), abs(numeric), 1e-8)
            if err > pmax:
                pmax = err
            if err > worst_err:
                worst_err, worst_name = err, f"{name}[{i}]"
        per_param[name] = pmax
    store.zero_grads()
    return GradCheckReport(worst_err < tol, tol, step, worst_err, worst_name, per_param)
