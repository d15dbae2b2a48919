"""Central-difference gradient checking for the autodiff engine."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], tensor: Tensor, step: float = 1e-6,
                   indices=None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. entries of ``tensor`` (perturbed in place).

    ``indices`` restricts the check to a subset of flat positions; other
    entries of the result are NaN.
    """
    flat = tensor.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + step
        up = float(fn().item())
        flat[i] = orig - step
        down = float(fn().item())
        flat[i] = orig
        out[i] = (up - down) / (2 * step)
    return out.reshape(tensor.shape)


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``; NaN entries of ``numeric`` are ignored."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.where(np.isnan(n), 0.0, err)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-6,
                    floor: float = 1e-6, max_entries=None, rng=None) -> float:
    """Largest relative error between backward() and central differences over ``tensors``.

    With ``max_entries`` only a random subset of entries per tensor is probed.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for t, a in zip(tensors, analytic):
        idx = None
        if max_entries is not None and t.size > max_entries:
            idx = rng.choice(t.size, size=max_entries, replace=False)
        num = numerical_grad(fn, t, step, idx)
        worst = max(worst, float(relative_error(a, num, floor).max()))
    return worst
