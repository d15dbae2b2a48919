"""Minimal define-by-run reverse-mode autodiff over numpy arrays.

Only the operations the vocoder needs are provided. Arrays are float32 by
default; float64 tensors are supported throughout so gradients can be checked
against finite differences. Operands never broadcast, except for the scalar
factor of :func:`scale` and :func:`add_scalar`.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, UsageError

# floor on the norm / magnitude that divides their gradients (sqrt'(0) guard)
NORM_EPS = 1e-7

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Array value with an optional gradient slot.

    Leaf tensors (created directly, not by an op) accumulate into ``grad``
    every time :meth:`backward` reaches them. Call :meth:`zero_grad` between
    optimization steps. Intermediate tensors keep their gradient only when
    :meth:`retain_grad` was called before the backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_retain")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._retain = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Propagate gradients from this scalar to every reachable leaf.

        Repeated calls without :meth:`zero_grad` accumulate.
        """
        if grad is None:
            if self.data.size != 1:
                raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological_order(self)
        pending = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None or node._retain:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg


class Parameter(Tensor):
    """Trainable leaf tensor with a path-like name (e.g. ``blocks.3.conv.w_past``)."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ConfigurationError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ConfigurationError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# -- pointwise --------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    x, y = a.data, b.data
    return _result(x * y, (a, b), lambda g: (g * y, g * x))


def scale(a: Tensor, factor: float) -> Tensor:
    f = a.dtype.type(factor)
    return _result(a.data * f, (a,), lambda g: (g * f,))


def add_scalar(a: Tensor, value: float) -> Tensor:
    return _result(a.data + a.dtype.type(value), (a,), lambda g: (g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows
    x = a.data
    half = x.dtype.type(0.5)
    y = half * (np.tanh(x * half) + 1)
    return _result(y, (a,), lambda g: (g * y * (1 - y),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    x = a.data
    s = x.dtype.type(slope)
    factor = (x > 0).astype(x.dtype)
    factor *= 1 - s
    factor += s
    return _result(x * factor, (a,), lambda g: (g * factor,))


def log_clamped(a: Tensor, floor: float = 1e-7) -> Tensor:
    """``log(max(a, floor))``; the gradient is zero where the floor is active."""
    x = a.data
    f = x.dtype.type(floor)
    clipped = np.maximum(x, f)
    active = x > f
    return _result(np.log(clipped), (a,), lambda g: (np.where(active, g / clipped, 0).astype(x.dtype),))


def divide(a: Tensor, b: Tensor, eps: float = NORM_EPS) -> Tensor:
    """``a / max(b, eps)`` for same-shape operands (used on scalars)."""
    _same_shape(a, b, "divide")
    den = np.maximum(b.data, b.dtype.type(eps))
    active = b.data > eps
    q = a.data / den

    def backward(g):
        return g / den, np.where(active, -g * q / den, 0).astype(b.dtype)

    return _result(q, (a, b), backward)


# -- structural ---------------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def channel_slice(a: Tensor, start: int, stop: int) -> Tensor:
    """Select channels ``start:stop`` of a ``[B, C, T]`` tensor."""
    src_shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop], (a,), backward)


def _shift_constant(x: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(x)
    T = x.shape[-1]
    if k >= 0 and k < T:
        out[..., : T - k] = x[..., k:]
    elif k < 0 and -k < T:
        out[..., -k:] = x[..., : T + k]
    return out


def shift(a: Tensor, offsets: Union[int, np.ndarray]) -> Tensor:
    """Gather ``out[..., t] = a[..., t + offsets[t]]``, reading zeros out of range.

    ``offsets`` is a single integer, a length-``T`` vector, or a ``[B, T]``
    matrix for per-item schedules. The backward pass scatters gradients back
    to the source positions (several outputs may read one source).
    """
    x = a.data
    if np.ndim(offsets) == 0:
        k = int(offsets)
        return _result(_shift_constant(x, k), (a,), lambda g: (_shift_constant(g, -k),))

    B, C, T = x.shape
    off = np.asarray(offsets, dtype=np.int64)
    if off.shape not in ((T,), (B, T)):
        raise ConfigurationError(f"shift: offsets shape {off.shape} does not match T={T} (B={B})")
    idx = np.arange(T) + off
    valid = (idx >= 0) & (idx < T)
    idx = np.where(valid, idx, 0)
    if off.ndim == 1:
        out = x[..., idx] * valid.astype(x.dtype)
        row_idx = np.broadcast_to(idx, (B * C, T))
        row_valid = np.broadcast_to(valid, (B * C, T))
    else:
        out = np.take_along_axis(x, idx[:, None, :], axis=-1) * valid[:, None, :].astype(x.dtype)
        row_idx = np.repeat(idx, C, axis=0)
        row_valid = np.repeat(valid, C, axis=0)

    def backward(g):
        flat = (row_idx + (np.arange(B * C) * T)[:, None])[row_valid]
        weights = g.reshape(B * C, T)[row_valid]
        scattered = np.bincount(flat, weights=weights, minlength=B * C * T)
        return (scattered.reshape(B, C, T).astype(x.dtype, copy=False),)

    return _result(out, (a,), backward)


def conv1x1(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Pointwise convolution ``out[b,o,t] = sum_i w[o,i] x[b,i,t] + bias[o]``."""
    if x.data.ndim != 3 or weight.data.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ConfigurationError(
            f"conv1x1: input {x.shape} incompatible with weight {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ConfigurationError(f"conv1x1: bias {bias.shape} vs weight {weight.shape}")
    if x.dtype != weight.dtype or (bias is not None and bias.dtype != weight.dtype):
        raise ConfigurationError(f"conv1x1: dtype mismatch, input {x.dtype} vs weight {weight.dtype}")
    xd, w = x.data, weight.data
    out = np.matmul(w, xd)
    if bias is not None:
        out += bias.data[:, None]

    def backward(g):
        gx = np.matmul(w.T, g) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = g[0] @ xd[0].T
            for b in range(1, g.shape[0]):
                gw += g[b] @ xd[b].T
        gb = g.sum(axis=2).sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


# -- reductions ---------------------------------------------------------------

def _nonempty(a: Tensor, op: str) -> None:
    if a.size == 0:
        raise ConfigurationError(f"{op}: empty tensor")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    _nonempty(a, "sum")
    shape, dtype = a.shape, a.dtype
    return _result(np.asarray(a.data.sum(), dtype=dtype), (a,),
                   lambda g: (np.full(shape, g, dtype=dtype),))


def mean(a: Tensor) -> Tensor:
    _nonempty(a, "mean")
    shape, dtype, n = a.shape, a.dtype, a.size
    return _result(np.asarray(a.data.mean(), dtype=dtype), (a,),
                   lambda g: (np.full(shape, g / n, dtype=dtype),))


def l1_norm(a: Tensor) -> Tensor:
    _nonempty(a, "l1_norm")
    x = a.data
    return _result(np.asarray(np.abs(x).sum(), dtype=x.dtype), (a,),
                   lambda g: (g * np.sign(x),))


def frobenius_norm(a: Tensor) -> Tensor:
    """``sqrt(sum a^2)``; the gradient ``a / ||a||`` divides by ``max(||a||, NORM_EPS)``."""
    _nonempty(a, "frobenius_norm")
    x = a.data
    norm = np.sqrt(np.asarray((x * x).sum(), dtype=x.dtype))
    return _result(norm, (a,), lambda g: (g * x / max(norm, x.dtype.type(NORM_EPS)),))


# -- spectral -----------------------------------------------------------------

def hann_window(length: int, dtype=np.float32) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(length)
    return (0.5 - 0.5 * np.cos(2 * np.pi * n / length)).astype(dtype)


def stft_magnitude(signal: Tensor, fft_size: int, hop: int, win_length: int) -> Tensor:
    """Magnitude STFT of a ``[B, T]`` signal, returned as ``[B, fft_size // 2 + 1, frames]``.

    Frame ``n`` covers samples ``[n * hop, n * hop + win_length)``; no
    centering padding is applied, so ``frames = 1 + (T - win_length) // hop``.
    """
    x = signal.data
    if x.ndim != 2:
        raise ConfigurationError(f"stft_magnitude: expected [B, T], got {signal.shape}")
    B, T = x.shape
    if win_length > fft_size:
        raise ConfigurationError(f"stft_magnitude: win_length {win_length} > fft_size {fft_size}")
    if T < win_length:
        raise ConfigurationError(f"stft_magnitude: signal length {T} shorter than one frame ({win_length})")
    dtype = x.dtype
    window = hann_window(win_length, dtype)
    frames = sliding_window_view(x, win_length, axis=-1)[:, ::hop, :]
    n_frames = frames.shape[1]
    spec = np.fft.rfft(frames * window, n=fft_size, axis=-1)
    power = (spec.real * spec.real + spec.imag * spec.imag).astype(dtype, copy=False)
    mag = np.sqrt(power)

    def backward(g):
        gt = np.swapaxes(g, 1, 2)
        coef = spec * (gt / np.maximum(mag, dtype.type(NORM_EPS)))
        # adjoint of rfft: halve the bins that irfft counts twice
        last = fft_size // 2 if fft_size % 2 == 0 else fft_size // 2 + 1
        coef[..., 1:last] *= 0.5
        gframes = np.fft.irfft(coef, n=fft_size, axis=-1)[..., :win_length] * fft_size
        gframes = (gframes * window).astype(dtype, copy=False)
        gx = np.zeros((B, T), dtype=dtype)
        for n in range(n_frames):
            gx[:, n * hop: n * hop + win_length] += gframes[:, n]
        return (gx,)

    return _result(np.ascontiguousarray(np.swapaxes(mag, 1, 2)), (signal,), backward)


def parameters_grad_zero(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
