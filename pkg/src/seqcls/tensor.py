"""Dense tensors with reverse-mode automatic differentiation.

Forward ops run eagerly on float64 numpy arrays.  While a :class:`Tape`
is active, every op whose output depends on a gradient-carrying input
appends one backward rule to the tape; ``Tape.backward`` replays the
rules in reverse order, accumulating gradients into each tensor's
``grad`` slot.  Ops executed with no active tape (evaluation mode) pay
no recording cost.

Shapes are explicit and row-major.  There is no implicit broadcasting,
with one documented exception: ``add`` accepts a trailing-shape bias
operand and broadcasts it over the leading axis (the usual ``Wx + b``
pattern); its backward rule sums the gradient over the broadcast axis.

``check_gradients`` compares tape gradients against central finite
differences and is the verification path for every layer built on top
of this module.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, ParameterError
from .rng import RandomSource

DTYPE = np.float64


class Tensor:
    """A dense n-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of ops for one backward pass.

    Ops are appended in execution order, which is a topological order by
    construction; ``backward`` visits each record exactly once, in
    reverse.  A tape is confined to one logical thread of execution.
    """

    def __init__(self):
        self._records: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def record(self, backward: Callable[[], None]) -> None:
        self._records.append(backward)

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and run every backward rule once."""
        if loss.size != 1:
            raise DimensionError(
                f"backward needs a scalar loss, got shape {loss.shape}"
            )
        if not np.isfinite(loss.data).all():
            raise NumericError("loss is not finite")
        loss.accumulate_grad(np.ones_like(loss.data))
        for rule in reversed(self._records):
            rule()


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make_output(data: np.ndarray, inputs: Sequence[Tensor],
                 backward_builder) -> Tensor:
    """Wrap op output; record a backward rule when tracing is on."""
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(backward_builder(out))
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def build(out: Tensor):
        def rule():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ g)
        return rule

    return _make_output(data, (a, b), build)


def matvec(a: Tensor, x: Tensor) -> Tensor:
    """Matrix-vector product: (m, n) @ (n,) -> (m,)."""
    if a.data.ndim != 2 or x.data.ndim != 1 or a.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec shapes incompatible: {a.shape} @ {x.shape}")
    data = a.data @ x.data

    def build(out: Tensor):
        def rule():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(np.outer(g, x.data))
            if x.requires_grad:
                x.accumulate_grad(a.data.T @ g)
        return rule

    return _make_output(data, (a, x), build)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {x.shape}")

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(out.grad.T)
        return rule

    return _make_output(x.data.T, (x,), build)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a bias broadcast over leading axes."""
    if a.shape != b.shape:
        # bias-add: b's shape must be a suffix of a's.
        k = b.data.ndim
        if k == 0 or a.data.ndim <= k or a.shape[a.data.ndim - k:] != b.shape:
            raise DimensionError(f"add shapes incompatible: {a.shape} + {b.shape}")
    data = a.data + b.data

    def build(out: Tensor):
        def rule():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                if a.shape == b.shape:
                    b.accumulate_grad(g)
                else:
                    axes = tuple(range(a.data.ndim - b.data.ndim))
                    b.accumulate_grad(g.sum(axis=axes))
        return rule

    return _make_output(data, (a, b), build)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes incompatible: {a.shape} * {b.shape}")
    data = a.data * b.data

    def build(out: Tensor):
        def rule():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g * b.data)
            if b.requires_grad:
                b.accumulate_grad(g * a.data)
        return rule

    return _make_output(data, (a, b), build)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(out.grad * c)
        return rule

    return _make_output(x.data * c, (x,), build)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(out.grad * (1.0 - out.data * out.data))
        return rule

    return _make_output(data, (x,), build)


def sigmoid(x: Tensor) -> Tensor:
    # Branch on sign so exp never overflows.
    d = x.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                    np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(out.grad * out.data * (1.0 - out.data))
        return rule

    return _make_output(data, (x,), build)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(out.grad * (x.data > 0.0))
        return rule

    return _make_output(data, (x,), build)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(out.grad / x.data)
        return rule

    return _make_output(data, (x,), build)


def clip_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient passes through only where x >= floor."""
    data = np.maximum(x.data, floor)

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(out.grad * (x.data >= floor))
        return rule

    return _make_output(data, (x,), build)


# ---------------------------------------------------------------------------
# reductions and structure


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    if x.data.ndim == 0 or x.shape[axis] < 1:
        raise DimensionError(f"softmax needs a non-empty axis, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                g = out.grad
                w = out.data
                dot = (g * w).sum(axis=axis, keepdims=True)
                x.accumulate_grad(w * (g - dot))
        return rule

    return _make_output(data, (x,), build)


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    """Join two tensors along ``axis``; backward splits the gradient."""
    if a.data.ndim != b.data.ndim:
        raise DimensionError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    for d in range(a.data.ndim):
        if d != axis % a.data.ndim and a.shape[d] != b.shape[d]:
            raise DimensionError(f"concat shapes incompatible: {a.shape} vs {b.shape}")
    data = np.concatenate([a.data, b.data], axis=axis)
    split = a.shape[axis % a.data.ndim]

    def build(out: Tensor):
        def rule():
            g = out.grad
            ga, gb = np.split(g, [split], axis=axis)
            if a.requires_grad:
                a.accumulate_grad(ga)
            if b.requires_grad:
                b.accumulate_grad(gb)
        return rule

    return _make_output(data, (a, b), build)


def concat_all(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = parts[0]
    for p in parts[1:]:
        out = concat(out, p, axis=axis)
    return out


def sum_all(x: Tensor) -> Tensor:
    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(np.full_like(x.data, float(out.grad)))
        return rule

    return _make_output(np.asarray(x.data.sum()), (x,), build)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def sum_rows(x: Tensor) -> Tensor:
    """Sum a 2-D tensor over axis 0, yielding one row."""
    if x.data.ndim != 2:
        raise DimensionError(f"sum_rows needs a 2-D tensor, got {x.shape}")

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(np.broadcast_to(out.grad, x.shape))
        return rule

    return _make_output(x.data.sum(axis=0), (x,), build)


def row(x: Tensor, i: int) -> Tensor:
    """Row ``i`` of a 2-D tensor as a vector."""
    if x.data.ndim != 2:
        raise DimensionError(f"row needs a 2-D tensor, got {x.shape}")
    i = int(i)

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[i] = out.grad
                x.accumulate_grad(g)
        return rule

    return _make_output(x.data[i].copy(), (x,), build)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) of a 2-D tensor."""
    if x.data.ndim != 2:
        raise DimensionError(f"slice_rows needs a 2-D tensor, got {x.shape}")

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[start:stop] = out.grad
                x.accumulate_grad(g)
        return rule

    return _make_output(x.data[start:stop].copy(), (x,), build)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack same-length vectors into a matrix, one per row.

    The same tensor may appear more than once; its gradient then
    accumulates over every occurrence.
    """
    width = rows[0].shape
    for r in rows:
        if r.data.ndim != 1 or r.shape != width:
            raise DimensionError(f"stack_rows needs equal vectors, got {r.shape} vs {width}")
    data = np.stack([r.data for r in rows])
    held = list(rows)

    def build(out: Tensor):
        def rule():
            g = out.grad
            for k, r in enumerate(held):
                if r.requires_grad:
                    r.accumulate_grad(g[k])
        return rule

    return _make_output(data, held, build)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Select rows of ``table`` by index (embedding lookup)."""
    if table.data.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D table, got {table.shape}")
    idx = np.asarray(ids, dtype=np.intp)

    def build(out: Tensor):
        def rule():
            if table.requires_grad:
                g = np.zeros_like(table.data)
                np.add.at(g, idx, out.grad)
                table.accumulate_grad(g)
        return rule

    return _make_output(table.data[idx].copy(), (table,), build)


def slice_vec(x: Tensor, start: int, stop: int) -> Tensor:
    """Elements [start, stop) of a vector."""
    if x.data.ndim != 1:
        raise DimensionError(f"slice_vec needs a vector, got {x.shape}")

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[start:stop] = out.grad
                x.accumulate_grad(g)
        return rule

    return _make_output(x.data[start:stop].copy(), (x,), build)


def pick(x: Tensor, i: int) -> Tensor:
    """Element ``i`` of a vector as a scalar tensor."""
    if x.data.ndim != 1:
        raise DimensionError(f"pick needs a vector, got {x.shape}")
    i = int(i)

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[i] = float(out.grad)
                x.accumulate_grad(g)
        return rule

    return _make_output(np.asarray(x.data[i]), (x,), build)


# ---------------------------------------------------------------------------
# normalization and regularization


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis, then affine gain/bias."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def build(out: Tensor):
        def rule():
            g = out.grad
            if gain.requires_grad:
                gain.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
            if bias.requires_grad:
                bias.accumulate_grad(g.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                gx = g * gain.data
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                x.accumulate_grad(inv * (gx - m1 - xhat * m2))
        return rule

    return _make_output(data, (x, gain, bias), build)


def dropout(x: Tensor, p: float, rng: RandomSource, training: bool) -> Tensor:
    """Inverted dropout: keep with probability 1-p and scale by 1/(1-p).

    Identity in evaluation mode and for p == 0.  The sampled mask is
    captured by the backward rule, so gradients use the exact same mask.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.bernoulli(1.0 - p, x.shape) / (1.0 - p)
    data = x.data * keep

    def build(out: Tensor):
        def rule():
            if x.requires_grad:
                x.accumulate_grad(out.grad * keep)
        return rule

    return _make_output(data, (x,), build)


# ---------------------------------------------------------------------------
# verification


def check_gradients(f: Callable[[], Tensor], params: Iterable[Tensor],
                    h: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` must rebuild the scalar loss from ``params`` on every call and
    be deterministic (evaluation mode, or a fixed dropout stream per
    call).  Relative error is |a - n| / max(|a|, |n|, 1e-8) per
    coordinate; the maximum over all coordinates of all params is
    returned.
    """
    if h <= 0:
        raise ParameterError(f"finite-difference step must be positive, got {h}")
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        if not np.isfinite(loss.data).all():
            raise NumericError("loss is not finite at the evaluation point")
        tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().data)
            flat[i] = orig - h
            down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
