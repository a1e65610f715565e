"""Layers with hand-written forward and backward passes.

Every forward function returns its output plus whatever the matching
backward needs; nothing is recorded globally.  Arrays are plain numpy
arrays and keep the caller's dtype (float64 for gradient checks, float32 is
fine for training).
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
BCE_CLAMP = 1e-7


def _check(cond, msg):
    if not cond:
        raise ValueError(msg)


# -- dense --------------------------------------------------------------------


def dense_forward(x, W, b=None):
    _check(x.ndim == 2 and W.ndim == 2 and x.shape[1] == W.shape[0],
           f"dense: input {x.shape} incompatible with weights {W.shape}")
    y = x @ W
    if b is not None:
        _check(b.shape == (W.shape[1],), f"dense: bias {b.shape} != ({W.shape[1]},)")
        y = y + b
    return y


def dense_backward(dy, x, W):
    """Return ``(dx, dW, db)`` for ``y = x W + b``."""
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# -- 1-d convolution ----------------------------------------------------------


def conv1d_forward(x, F, b=None):
    """Valid temporal convolution.

    x: [B, n, d], F: [w, d, c] -> y: [B, n - w + 1, c] with
    ``y[:, t] = sum_j x[:, t + j] @ F[j]``.
    """
    _check(x.ndim == 3 and F.ndim == 3 and x.shape[2] == F.shape[1],
           f"conv1d: input {x.shape} incompatible with filters {F.shape}")
    w = F.shape[0]
    n = x.shape[1]
    _check(n >= w, f"conv1d: sequence length {n} shorter than filter width {w}")
    t = n - w + 1
    y = x[:, 0:t] @ F[0]
    for j in range(1, w):
        y = y + x[:, j:j + t] @ F[j]
    if b is not None:
        y = y + b
    return y


def conv1d_backward(dy, x, F):
    """Return ``(dx, dF, db)``."""
    w = F.shape[0]
    t = dy.shape[1]
    B, n, d = x.shape
    c = F.shape[2]
    dx = np.zeros_like(x)
    dF = np.empty_like(F)
    dy2 = dy.reshape(B * t, c)
    for j in range(w):
        dF[j] = x[:, j:j + t].reshape(B * t, d).T @ dy2
        dx[:, j:j + t] += dy @ F[j].T
    return dx, dF, dy.sum(axis=(0, 1))


# -- max over time ------------------------------------------------------------


def max_over_time_forward(x):
    """Per-channel maximum over axis 1; returns ``(y, argmax)``.

    ``np.argmax`` returns the first maximal index, which is the tie rule.
    """
    _check(x.ndim == 3, f"max_over_time: expected [B, t, c], got {x.shape}")
    _check(x.shape[1] >= 1, "max_over_time: empty time axis")
    idx = np.argmax(x, axis=1)
    y = np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :]
    return y, idx


def max_over_time_backward(dy, idx, t):
    B, c = dy.shape
    dx = np.zeros((B, t, c), dtype=dy.dtype)
    np.put_along_axis(dx, idx[:, None, :], dy[:, None, :], axis=1)
    return dx


# -- batch normalization ------------------------------------------------------


class BatchNorm:
    """Batch normalization over the leading axis of a [B, f] input.

    Train mode normalizes with batch statistics (biased variance) and updates
    the running averages with momentum 0.9; infer mode uses the running
    averages.
    """

    def __init__(self, num_features, dtype=np.float64):
        self.gamma = np.ones(num_features, dtype=dtype)
        self.beta = np.zeros(num_features, dtype=dtype)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)

    def forward(self, x, train):
        _check(x.ndim == 2 and x.shape[1] == self.gamma.shape[0],
               f"batch_norm: input {x.shape} vs {self.gamma.shape[0]} features")
        if train:
            _check(x.shape[0] >= 2, "batch_norm: train mode needs a batch of at least 2")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = BN_MOMENTUM * self.running_mean + (1 - BN_MOMENTUM) * mu
            self.running_var = BN_MOMENTUM * self.running_var + (1 - BN_MOMENTUM) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mu) * inv_std
        return self.gamma * xhat + self.beta, (xhat, inv_std, train)

    def backward(self, dy, cache):
        """Return ``(dx, dgamma, dbeta)``."""
        xhat, inv_std, train = cache
        dgamma = (dy * xhat).sum(axis=0)
        dbeta = dy.sum(axis=0)
        dxhat = dy * self.gamma
        if not train:
            return dxhat * inv_std, dgamma, dbeta
        m = dy.shape[0]
        dx = inv_std / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, dgamma, dbeta


def batch_norm_forward(x, gamma, beta, running_mean, running_var, train):
    """Functional form; returns ``(y, cache, new_running_mean, new_running_var)``."""
    bn = BatchNorm(gamma.shape[0], dtype=x.dtype)
    bn.gamma, bn.beta = gamma, beta
    bn.running_mean, bn.running_var = running_mean, running_var
    y, cache = bn.forward(x, train)
    return y, cache, bn.running_mean, bn.running_var


def batch_norm_backward(dy, gamma, cache):
    bn = BatchNorm(gamma.shape[0], dtype=dy.dtype)
    bn.gamma = gamma
    return bn.backward(dy, cache)


# -- dropout ------------------------------------------------------------------


def dropout_forward(x, rate, seed, train):
    """Inverted dropout; the mask depends only on ``seed``. Returns ``(y, mask)``."""
    _check(0 <= rate < 1, f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x, None
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    mask = keep.astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# -- activations --------------------------------------------------------------


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def sigmoid_forward(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


def softmax_forward(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy, y, axis=-1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


# -- loss ---------------------------------------------------------------------


def bce_loss(p, y):
    """Mean binary cross-entropy over all entries; returns ``(loss, dp)``.

    ``p`` is clamped to ``[1e-7, 1 - 1e-7]`` and the gradient is evaluated at
    the clamped value, so saturated outputs still receive a signal.
    """
    _check(p.shape == y.shape, f"bce: prediction shape {p.shape} != target shape {y.shape}")
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    dp = (pc - y) / (pc * (1.0 - pc)) / n
    return float(loss), dp


# -- initializers -------------------------------------------------------------


def kaiming(rng, fan_in, shape, dtype=np.float64):
    """Fan-in scaled normal init for layers followed by ReLU."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def xavier(rng, fan_in, fan_out, shape, dtype=np.float64):
    """Glorot uniform init for layers followed by sigmoid/softmax."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)
