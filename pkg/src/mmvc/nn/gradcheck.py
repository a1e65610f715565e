from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return grad


def gradient_check(
    f: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` takes no arguments and must read ``params`` (which are perturbed in
    place and restored).  The per-coordinate error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    worst = 0.0
    for name, x in params.items():
        num = numeric_gradient(f, x, eps)
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != num.shape:
            raise ValueError(f"analytic gradient for {name!r} has shape {a.shape}, expected {num.shape}")
        if num.size:
            worst = max(worst, float(relative_error(a, num).max()))
    return worst
