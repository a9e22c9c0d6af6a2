"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op computes its forward value with numpy and, when
recording is enabled and some input requires a gradient, appends a node to
the active tape. ``backward`` replays that tape in reverse.

Masking uses a single mechanism everywhere: ``softmax(x, mask=...)`` adds
``MASK_FILL`` to masked logits before the max-subtracted exponentiation.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64
MASK_FILL = -1e30


class DimensionError(ValueError):
    pass


class DegenerateDistributionError(ValueError):
    pass


class LabelRangeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar; all route through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class ComputationTape:
    """Ordered record of executed differentiable ops."""

    nodes: list[_Node] = field(default_factory=list)

    def record(self, inputs, output, backward) -> None:
        self.nodes.append(_Node(tuple(inputs), output, backward))

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g_out = node.output.grad
            if g_out is None:
                continue
            grads = node.backward(g_out)
            for inp, g in zip(node.inputs, grads):
                if not inp.requires_grad:
                    continue
                if g is None:
                    g = np.zeros_like(inp.data)
                if inp.grad is None:
                    inp.grad = np.array(g, dtype=DTYPE, copy=True)
                else:
                    inp.grad += g


_state = threading.local()


def _tape_state():
    if not hasattr(_state, "tape"):
        _state.tape = ComputationTape()
        _state.enabled = True
    return _state


def get_tape() -> ComputationTape:
    return _tape_state().tape


@contextlib.contextmanager
def no_grad():
    st = _tape_state()
    prev = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = prev


@contextlib.contextmanager
def fresh_tape():
    """Run a block on its own empty tape; the tape is cleared on exit."""
    st = _tape_state()
    prev_tape, prev_enabled = st.tape, st.enabled
    st.tape, st.enabled = ComputationTape(), True
    try:
        yield st.tape
    finally:
        st.tape.clear()
        st.tape, st.enabled = prev_tape, prev_enabled


def backward(loss: Tensor) -> None:
    get_tape().backward(loss)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    st = _tape_state()
    needs = st.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        st.tape.record(inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from None
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes of ``a`` batch."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as [out, in]."""
    y = matmul(x, transpose(weight))
    return y if bias is None else add(y, bias)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return _make(out, (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
    return _make(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


ACTIVATIONS = {"tanh": tanh, "gelu": gelu}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select; ``cond`` is a constant boolean array."""
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                   _unbroadcast(np.where(cond, 0.0, g), b.shape)),
    )


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Max-stabilized softmax. ``mask`` (broadcastable bool) marks kept entries."""
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=axis).all():
            raise DegenerateDistributionError("softmax over a fully masked slice")
        z = z + np.where(mask, 0.0, MASK_FILL)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _make(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Tensor, targets, ignore_index: int = -100) -> Tensor:
    """Mean negative log-likelihood over rows of ``logits`` [N, C].

    Rows whose target equals ``ignore_index`` contribute nothing; with no
    counted rows the loss is 0.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
    n, c = logits.shape
    if targets.shape != (n,):
        raise DimensionError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    keep = targets != ignore_index
    bad = keep & ((targets < 0) | (targets >= c))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise LabelRangeError(f"target {int(targets[i])} at row {i} outside [0, {c})")
    count = int(keep.sum())
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.flatnonzero(keep)
    denom = max(count, 1)
    loss = -logp[rows, targets[rows]].sum() / denom

    def bw(g):
        grad = np.exp(logp)
        grad[rows, targets[rows]] -= 1.0
        grad[~keep] = 0.0
        return (grad * (g / denom),)

    return _make(np.asarray(loss), (logits,), bw)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _make(out, (x, gamma, beta), bw)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` [V, d]; output shape is ids.shape + (d,)."""
    ids = np.asarray(ids, dtype=np.int64)
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        pos = np.argwhere((ids < 0) | (ids >= v))[0]
        raise IndexError(f"id {int(ids[tuple(pos)])} at position {tuple(int(p) for p in pos)} "
                         f"outside table of {v} rows")

    def bw(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _make(table.data[ids], (table,), bw)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


class NumericError(ArithmeticError):
    pass


@dataclass
class GradCheckReport:
    max_rel_err: dict[str, float]
    checked: dict[str, int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.worst <= tol


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f()`` against central differences.

    ``f`` must be deterministic and read parameter values at call time.
    With ``max_entries`` set, each tensor is probed at that many coordinates:
    the largest-gradient ones first, then a uniform random sample.
    """
    for p in params.values():
        p.grad = None
    with fresh_tape() as tape:
        loss = f()
        if not np.isfinite(loss.data).all():
            raise NumericError(f"non-finite loss {loss.item()} at the unperturbed point")
        tape.backward(loss)
    rng = rng or np.random.default_rng(0)

    report = GradCheckReport({}, {})
    with no_grad():
        for name, p in params.items():
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                top = np.argsort(-np.abs(analytic.reshape(-1)), kind="stable")[: max_entries // 2]
                rest = np.setdiff1d(coords, top)
                extra = rng.choice(rest, size=max_entries - top.size, replace=False)
                coords = np.concatenate([top, extra])
            worst = 0.0
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
                numeric = (fp - fm) / (2.0 * eps)
                worst = max(worst, float(relative_error(analytic.reshape(-1)[i], numeric)))
            report.max_rel_err[name] = worst
            report.checked[name] = int(coords.size)
    for p in params.values():
        p.grad = None
    return report
