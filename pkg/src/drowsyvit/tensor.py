"""Dense tensors with reverse-mode differentiation.

The substrate for the transformer: numpy arrays wrapped in a Tensor that
carries an optional gradient buffer, plus a DifferentiationTape that records
executed ops so a backward sweep can replay them in exact reverse order.
Gradients of shared inputs accumulate by summation.

Conventions:
- Tensors are float64 by default (test/oracle mode); float32 is allowed for
  trained parameters. Every op output is checked for NaN/Inf and raises
  NonFiniteError instead of propagating silently.
- Ops record onto the innermost active tape only when some input requires a
  gradient; with no active tape the same ops run as pure functions.
- Tapes are single-threaded; independent tapes on different threads are fine
  (the active-tape stack is thread local).
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, InvalidOracleError, NonFiniteError, ShapeError

_GELU_SCALE = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715


class Tensor:
    """Dense n-dimensional real array with optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor holds NaN or Inf values")
        self.data = arr
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

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise ContractError("tensor/tensor division is not supported")
        return multiply(self, 1.0 / float(scalar))

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _OpRecord:
    __slots__ = ("output", "backward")

    def __init__(self, output: Tensor, backward: Callable[[np.ndarray], None]):
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed ops; context manager activates it."""

    def __init__(self):
        self._records: list[_OpRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        assert popped is self, "tapes exited out of order"


_LOCAL = threading.local()


def _stack() -> list[Tape]:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = []
        _LOCAL.tapes = stack
    return stack


def _active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _finish(value: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result; record it when gradients are being traced."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape._records.append(_OpRecord(out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _finish(value, (a, b), backward)


def subtract(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"subtract: {a.shape} vs {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _finish(value, (a, b), backward)


def negate(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, -g)

    return _finish(-a.data, (a,), backward)


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"multiply: {a.shape} vs {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _finish(value, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast (batched operands allowed)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        value = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _finish(value, (a, b), backward)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose needs rank >= 2")

    def backward(g):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _finish(np.swapaxes(a.data, -1, -2), (a,), backward)


def softmax_rows(x) -> Tensor:
    """Row-wise softmax over the last axis, stabilized by row-max subtraction."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    value = exp / exp.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * value).sum(axis=-1, keepdims=True)
        _accumulate(x, value * (g - inner))

    return _finish(value, (x,), backward)


def gelu(x) -> Tensor:
    """GeLU via the tanh approximation 0.5*x*(1 + tanh(k*(x + c*x^3)))."""
    x = _as_tensor(x)
    cubic = x.data + _GELU_CUBIC * x.data ** 3
    t = np.tanh(_GELU_SCALE * cubic)
    value = 0.5 * x.data * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        inner = _GELU_SCALE * (1.0 + 3.0 * _GELU_CUBIC * x.data ** 2)
        _accumulate(x, g * (0.5 * (1.0 + t) + 0.5 * x.data * sech2 * inner))

    return _finish(value, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Zero-mean/unit-variance over the last axis, then gain*xhat + bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match width {width}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    value = gain.data * xhat + bias.data

    def backward(g):
        _accumulate(bias, _unbroadcast(g, bias.shape))
        _accumulate(gain, _unbroadcast(g * xhat, gain.shape))
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, (gx - m1 - xhat * m2) * inv)

    return _finish(value, (x, gain, bias), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of zero tensors")
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}") from exc
    widths = [t.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, w in zip(tensors, widths):
            index = [slice(None)] * g.ndim
            index[axis if axis >= 0 else g.ndim + axis] = slice(start, start + w)
            _accumulate(t, g[tuple(index)])
            start += w

    return _finish(value, tuple(tensors), backward)


def prepend_token(z, token) -> Tensor:
    """Prefix a (1, D) token row to a (..., N, D) sequence, broadcasting it."""
    z, token = _as_tensor(z), _as_tensor(token)
    if token.shape != (1, z.shape[-1]):
        raise ShapeError(f"token shape {token.shape} vs sequence width {z.shape[-1]}")
    lead = z.shape[:-2]
    tok = np.broadcast_to(token.data, lead + (1, z.shape[-1]))
    value = np.concatenate([tok, z.data], axis=-2)

    def backward(g):
        g_tok = g[..., :1, :]
        if g_tok.ndim > 2:
            g_tok = g_tok.sum(axis=tuple(range(g_tok.ndim - 2)))
        _accumulate(token, g_tok.reshape(token.shape))
        _accumulate(z, g[..., 1:, :])

    return _finish(value, (z, token), backward)


def select_token(z, index: int = 0) -> Tensor:
    """Pick one sequence row: (..., N, D) -> (..., D)."""
    z = _as_tensor(z)
    if z.ndim < 2:
        raise ShapeError("select_token needs rank >= 2")

    def backward(g):
        full = np.zeros_like(z.data)
        full[..., index, :] = g
        _accumulate(z, full)

    return _finish(z.data[..., index, :].copy(), (z,), backward)


def reduce_sum(x) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _finish(np.asarray(x.data.sum()), (x,), backward)


def reduce_mean(x) -> Tensor:
    x = _as_tensor(x)
    count = x.size

    def backward(g):
        _accumulate(x, np.broadcast_to(g / count, x.shape).copy())

    return _finish(np.asarray(x.data.mean()), (x,), backward)


def dropout(x, rate: float, rng) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    keep = rng.uniform(size=x.shape) >= rate
    mask = keep.astype(x.dtype) / (1.0 - rate)
    value = x.data * mask

    def backward(g):
        _accumulate(x, g * mask)

    return _finish(value, (x,), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ContractError(
            f"labels shape {labels.shape} does not match batch {logits.shape[0]}"
        )
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(labels.size)
    nll = log_z - shifted[rows, labels]
    value = np.asarray(nll.mean())
    probs = np.exp(shifted - log_z[:, None])

    def backward(g):
        delta = probs.copy()
        delta[rows, labels] -= 1.0
        _accumulate(logits, g * delta / labels.size)

    return _finish(value, (logits,), backward)


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle
# ---------------------------------------------------------------------------

def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(tensor) into .grad of every traced tensor."""
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    else:
        loss.grad += np.ones_like(loss.data)
    for record in reversed(tape._records):
        g = record.output.grad
        if g is None:
            continue
        record.backward(g)


def finite_diff_check(f, params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    f is a zero-argument deterministic function (a closure over params)
    returning a scalar Tensor. Error per element is
    |analytic - numeric| / (|analytic| + |numeric| + eps).
    """
    if h <= 0:
        raise ContractError("finite-difference step h must be positive")
    if f().item() != f().item():
        raise InvalidOracleError("f is not deterministic under a fixed seed")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = f().item()
            flat[i] = original - h
            minus = f().item()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * h)
            a = float(grads.reshape(-1)[i])
            err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
