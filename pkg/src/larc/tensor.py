"""Dense numpy tensors with a reverse-mode gradient tape.

Every op records a closure that pushes the output adjoint back to its
inputs; :meth:`Tensor.backward` replays those closures in reverse
topological order so each use of a tensor contributes exactly once.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError

_DTYPE = np.float32
_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

LN_EPS = 1e-5


class NumericalError(ArithmeticError):
    """Raised when a computation leaves the finite range."""


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basic protocol -------------------------------------------------
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

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            node._backward(g, grads)

    # -- operator sugar -------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    live = tuple(p for p in parents if p.requires_grad)
    out.requires_grad = bool(live)
    out._parents = live
    out._backward = backward if live else None
    return out


def _send(grads: dict, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bw(g, grads):
        _send(grads, a, _unbroadcast(g, a.shape))
        _send(grads, b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, grads):
        _send(grads, a, _unbroadcast(g, a.shape))
        _send(grads, b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, grads):
        _send(grads, a, _unbroadcast(g * b.data, a.shape))
        _send(grads, b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bw(g, grads):
        _send(grads, a, _unbroadcast(g / b.data, a.shape))
        _send(grads, b, _unbroadcast(-g * out_data / b.data, b.shape))

    return _make(out_data, (a, b), bw)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)
    return _make(out_data, (x,), lambda g, grads: _send(grads, x, g * out_data))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g, grads: _send(grads, x, g / x.data))


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)
    return _make(out_data, (x,), lambda g, grads: _send(grads, x, g * 0.5 / out_data))


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    return _make(out_data, (x,), lambda g, grads: _send(grads, x, g * (1.0 - out_data**2)))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so neither branch overflows
    pos = d >= 0
    ez = np.exp(np.where(pos, -d, d))
    out_data = np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez)).astype(d.dtype)
    return _make(out_data, (x,), lambda g, grads: _send(grads, x, g * out_data * (1.0 - out_data)))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF taken through erf."""
    d = x.data
    cdf = (0.5 * (1.0 + erf(d / _SQRT_2))).astype(d.dtype)
    out_data = d * cdf

    def bw(g, grads):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * d * d)
        _send(grads, x, g * (cdf + d * pdf).astype(d.dtype))

    return _make(out_data, (x,), bw)


def maximum(x: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(x, floor)`` against a constant."""
    keep = x.data >= floor
    out_data = np.where(keep, x.data, np.asarray(floor, dtype=x.data.dtype))
    return _make(out_data, (x,), lambda g, grads: _send(grads, x, g * keep))


# -- reductions and shape ops --------------------------------------------
def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g, grads):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(grads, x, np.broadcast_to(g, x.shape).copy())

    return _make(np.asarray(out_data), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g, grads: _send(grads, x, g.reshape(x.shape)))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _make(
        np.transpose(x.data, axes), (x,), lambda g, grads: _send(grads, x, np.transpose(g, inv))
    )


def getitem(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing."""

    def bw(g, grads):
        full = np.zeros_like(x.data)
        full[idx] = g
        _send(grads, x, full)

    return _make(np.array(x.data[idx]), (x,), bw)


def stack(items: Sequence[Tensor], axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]
    out_data = np.stack([t.data for t in items], axis=axis)

    def bw(g, grads):
        for k, t in enumerate(items):
            _send(grads, t, np.take(g, k, axis=axis))

    return _make(out_data, items, bw)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add back into the table."""
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g, grads):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        _send(grads, table, full)

    return _make(table.data[ids], (table,), bw)


# -- linear algebra -------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g, grads):
        if a.requires_grad:
            _send(grads, a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _send(grads, b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored (out_features, in_features)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear dimension mismatch: {x.shape} vs weight {weight.shape}")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data

    def bw(g, grads):
        if x.requires_grad:
            _send(grads, x, g @ weight.data)
        if weight.requires_grad:
            _send(grads, weight, g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None and bias.requires_grad:
            _send(grads, bias, g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out_data, parents, bw)


# -- normalisations -------------------------------------------------------
def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax. ``mask`` (broadcastable, bool) drops entries where False."""
    d = x.data
    if mask is not None:
        d = np.where(mask, d, -np.inf)
    shifted = d - np.max(d, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = (e / np.sum(e, axis=axis, keepdims=True)).astype(x.data.dtype)

    def bw(g, grads):
        dot = np.sum(g * out_data, axis=axis, keepdims=True)
        _send(grads, x, out_data * (g - dot))

    return _make(out_data, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    shifted = d - np.max(d, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out_data = shifted - lse

    def bw(g, grads):
        p = np.exp(out_data)
        _send(grads, x, g - p * np.sum(g, axis=axis, keepdims=True))

    return _make(out_data, (x,), bw)


def logsumexp(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Stable ``log(sum(exp(x)))`` over ``axis``; masked-out entries are excluded."""
    d = x.data if mask is None else np.where(mask, x.data, -np.inf)
    m = np.max(d, axis=axis, keepdims=True)
    e = np.exp(d - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out_keep = np.log(s) + m
    out_data = np.squeeze(out_keep, axis=axis)

    def bw(g, grads):
        _send(grads, x, np.expand_dims(g, axis) * (e / s))

    return _make(out_data, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise the last axis with population variance, then apply ``gain``/``bias``."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def bw(g, grads):
        if gain.requires_grad:
            _send(grads, gain, (g * xhat).reshape(-1, d.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            _send(grads, bias, g.reshape(-1, d.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            n = d.shape[-1]
            dx = inv / n * (
                n * gx - gx.sum(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True)
            )
            _send(grads, x, dx)

    return _make(out_data, (x, gain, bias), bw)


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    n = np.sqrt(np.sum(x.data * x.data, axis=axis))

    def bw(g, grads):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        _send(grads, x, x.data * np.expand_dims(scale, axis))

    return _make(n, (x,), bw)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. At eval time (or ``rate == 0``) the input tensor is returned as is."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
    return _make(x.data * keep, (x,), lambda g, grads: _send(grads, x, g * keep))


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite values in {what}")
    return t


# -- verification ---------------------------------------------------------
def finite_diff_audit(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-3,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``loss_fn`` is called with no arguments and must read the current values
    of ``params``; it has to be deterministic. Every scalar entry of every
    parameter is perturbed.
    """
    if not 1e-4 <= h <= 1e-2:
        raise ValueError(f"step h={h} outside [1e-4, 1e-2]")
    params = list(params)
    errs = audit_errors(loss_fn, params, h)
    return max((float(e.max()) if e.size else 0.0) for e in errs) if errs else 0.0


def finite_differences(
    loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Tape gradients and central-difference estimates for every entry of ``params``."""
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericalError("audit loss is not finite")
    loss.backward()
    tapes, fds = [], []
    for p in params:
        tapes.append(np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        fd = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = float(loss_fn().data)
            flat[j] = orig - h
            lm = float(loss_fn().data)
            flat[j] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericalError("audit loss is not finite")
            fd.reshape(-1)[j] = (lp - lm) / (2.0 * h)
        fds.append(fd)
    return tapes, fds


def relative_errors(tape: np.ndarray, fd: np.ndarray) -> np.ndarray:
    return np.abs(tape - fd) / np.maximum(np.maximum(np.abs(tape), np.abs(fd)), 1e-8)


def audit_errors(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float) -> list[np.ndarray]:
    """Per-parameter arrays of relative errors, same shapes as the parameters."""
    tapes, fds = finite_differences(loss_fn, params, h)
    return [relative_errors(t, f) for t, f in zip(tapes, fds)]
