"""Bag-of-centroids keyword features and their sigmoid decoder.

Keyword embeddings from the training split are clustered with k-means; a
video's keyword feature counts how many of its keywords fall nearest to each
centroid.  A two-layer network with sigmoid outputs classifies the counts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DataError
from .nn import (
    dense_backward,
    dense_forward,
    kaiming,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    xavier,
)
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.train import fit_bce
from .text import EmbeddingTable, embed_tokens

KMEANS_MAGIC = b"MMKM"
DEFAULT_CLUSTERS = 1024
DEFAULT_HIDDEN = 512

# bounds the n x k x d temporary used for exact squared distances
_CHUNK_ELEMS = 1 << 22


@dataclass
class CentroidSet:
    centroids: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(KMEANS_MAGIC)
            f.write(struct.pack("<II", self.k, self.dim))
            f.write(np.ascontiguousarray(self.centroids, dtype="<f4").tobytes())
            f.write(struct.pack("<d", self.inertia))

    @classmethod
    def load(cls, path) -> "CentroidSet":
        path = Path(path)
        if not path.exists():
            raise DataError(f"centroid file not found: {path}")
        raw = path.read_bytes()
        if raw[:4] != KMEANS_MAGIC or len(raw) < 12:
            raise DataError(f"{path}: not an MMKM file")
        k, dim = struct.unpack_from("<II", raw, 4)
        if len(raw) != 12 + 4 * k * dim + 8:
            raise DataError(f"{path}: size does not match k={k}, dim={dim}")
        c = np.frombuffer(raw, dtype="<f4", count=k * dim, offset=12).reshape(k, dim).astype(np.float64)
        (inertia,) = struct.unpack_from("<d", raw, 12 + 4 * k * dim)
        return cls(c, inertia)


def squared_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Exact ``|x_i - c_j|^2`` computed from differences, in row chunks."""
    n, d = x.shape
    out = np.empty((n, c.shape[0]))
    step = max(1, _CHUNK_ELEMS // max(1, c.shape[0] * d))
    for i in range(0, n, step):
        diff = x[i:i + step, None, :] - c[None, :, :]
        out[i:i + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = squared_distances(x, x[chosen[0]][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a chosen centre
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, squared_distances(x, x[nxt][None])[:, 0])
    return x[chosen].copy()


def kmeans_fit(vectors, k: int, seed: int, max_iters: int = 100, tol: float = 1e-6) -> CentroidSet:
    """Lloyd's algorithm from a seeded k-means++ start.

    Stops when the relative inertia improvement drops below ``tol`` or after
    ``max_iters`` updates.  An empty cluster is moved onto the point that is
    farthest from its current centroid.  ``history`` holds the inertia after
    every assignment step.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("vectors must be an n x dim matrix")
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"k-means needs at least k={k} points, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vectors must be finite")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    history = []

    def assign():
        d2 = squared_distances(x, centroids)
        labels = np.argmin(d2, axis=1)
        return labels, d2[np.arange(n), labels]

    for _ in range(max_iters):
        labels, dmin = assign()
        inertia = float(dmin.sum())
        history.append(inertia)
        if inertia == 0.0:
            break
        if len(history) > 1 and history[-2] - inertia < tol * history[-2]:
            break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        taken = set()
        for j in np.flatnonzero(~nonempty):
            far = np.argsort(-dmin, kind="stable")
            pick = next(int(i) for i in far if int(i) not in taken)
            taken.add(pick)
            centroids[j] = x[pick]
    else:
        labels, dmin = assign()
        history.append(float(dmin.sum()))
    return CentroidSet(centroids, history[-1], history)


def nearest_centroid(v, c: CentroidSet) -> int:
    """Index of the closest centroid (squared Euclidean); ties go to the smaller index."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (c.dim,):
        raise ValueError(f"vector dim {v.shape} does not match centroid dim {c.dim}")
    diff = c.centroids - v
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def histogram_feature(tokens: Sequence[str], table: EmbeddingTable, c: CentroidSet) -> np.ndarray:
    vecs, _ = embed_tokens(tokens, table)
    hist = np.zeros(c.k)
    if len(vecs):
        idx = np.argmin(squared_distances(vecs, c.centroids), axis=1)
        np.add.at(hist, idx, 1.0)
    return hist


def histogram_matrix(token_lists, table, c) -> np.ndarray:
    if not token_lists:
        return np.zeros((0, c.k))
    return np.stack([histogram_feature(t, table, c) for t in token_lists])


class HistogramDecoder:
    """dense -> ReLU -> dense -> sigmoid."""

    def __init__(self, in_dim, num_labels, hidden=DEFAULT_HIDDEN, seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.params = {
            "fc1.W": kaiming(rng, in_dim, (in_dim, hidden), dtype),
            "fc1.b": np.zeros(hidden, dtype=dtype),
            "fc2.W": xavier(rng, hidden, num_labels, (hidden, num_labels), dtype),
            "fc2.b": np.zeros(num_labels, dtype=dtype),
        }
        self.grads = {}
        self._cache = None
        self.loss_history: list[float] = []

    @property
    def in_dim(self):
        return self.params["fc1.W"].shape[0]

    def forward(self, x, train=False, key=None):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"decoder expects [B, {self.in_dim}] features, got {x.shape}")
        p = self.params
        z1 = dense_forward(x, p["fc1.W"], p["fc1.b"])
        h = relu_forward(z1)
        out = sigmoid_forward(dense_forward(h, p["fc2.W"], p["fc2.b"]))
        self._cache = (x, z1, h, out)
        return out

    def backward(self, dout):
        x, z1, h, out = self._cache
        p = self.params
        dz2 = sigmoid_backward(dout, out)
        dh, self.grads["fc2.W"], self.grads["fc2.b"] = dense_backward(dz2, h, p["fc2.W"])
        dz1 = relu_backward(dh, z1)
        dx, self.grads["fc1.W"], self.grads["fc1.b"] = dense_backward(dz1, x, p["fc1.W"])
        return dx

    def save(self, path):
        save_checkpoint(path, self.params)

    @classmethod
    def load(cls, path) -> "HistogramDecoder":
        tensors = load_checkpoint(path)
        try:
            in_dim, hidden = tensors["fc1.W"].shape
            num_labels = tensors["fc2.W"].shape[1]
        except KeyError as e:
            raise DataError(f"{path}: missing tensor {e.args[0]!r}") from None
        model = cls(in_dim, num_labels, hidden)
        model.params = tensors
        return model


def decoder_train(features, labels, *, hidden=DEFAULT_HIDDEN, lr=1e-3, batch_size=64, epochs=10,
                  seed=0, weight_decay=0.0) -> HistogramDecoder:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or labels.ndim != 2 or len(features) != len(labels):
        raise ValueError("features and labels must be aligned 2-d arrays")
    if len(features) == 0:
        raise ValueError("decoder_train needs at least one example")
    model = HistogramDecoder(features.shape[1], labels.shape[1], hidden, seed)
    model.loss_history = fit_bce(model, features, labels, epochs=epochs, batch_size=batch_size,
                                 lr=lr, weight_decay=weight_decay, seed=seed + 1)
    return model


def decoder_predict(model: HistogramDecoder, features) -> np.ndarray:
    return model.forward(np.asarray(features, dtype=np.float64), train=False)
