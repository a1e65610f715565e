from __future__ import annotations

import numpy as np

from .layers import bce_loss
from .optim import Adam


def minibatches(n, batch_size, rng):
    """Seeded shuffled index batches; a trailing batch of one joins the previous batch."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def fit_bce(model, x, y, *, epochs, batch_size, lr, weight_decay, seed):
    """Train ``model`` on binary cross-entropy with Adam.

    ``model`` must expose ``params`` / ``grads`` dicts, ``forward(x, train,
    key)`` returning probabilities and ``backward(dp)`` filling ``grads``.
    Returns the list of per-epoch mean training losses.
    """
    if len(x) != len(y):
        raise ValueError(f"{len(x)} inputs but {len(y)} targets")
    if len(x) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr, weight_decay=weight_decay)
    history = []
    step = 0
    for _ in range(epochs):
        total, count = 0.0, 0
        for idx in minibatches(len(x), batch_size, rng):
            p = model.forward(x[idx], train=True, key=(seed, step))
            loss, dp = bce_loss(p, y[idx])
            model.backward(dp)
            opt.step(model.params, model.grads)
            total += loss * len(idx)
            count += len(idx)
            step += 1
        history.append(total / count)
    return history
