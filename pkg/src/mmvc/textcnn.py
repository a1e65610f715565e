"""Multi-window convolutional title classifier.

For each filter width w in 1..w_max the zero-padded title embedding
[B, n_max, d] goes through conv1d -> batch norm -> ReLU -> max over time,
giving [B, channels].  The concatenation feeds a hidden dense layer
(-> batch norm -> ReLU), whose activations double as the text feature for
the fusion model, then dropout and a sigmoid output layer.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .data import DataError
from .nn import (
    BatchNorm,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    kaiming,
    max_over_time_backward,
    max_over_time_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    xavier,
)
from .nn.train import fit_bce
from .text import EmbeddingTable, embed_tokens

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TextCnnConfig:
    embed_dim: int = 300
    num_labels: int = 4716
    max_width: int = 8
    channels: int = 512
    hidden: int = 4096
    dropout: float = 0.5
    max_len: int = 30

    @property
    def widths(self) -> range:
        return range(1, self.max_width + 1)

    @property
    def padded_len(self) -> int:
        return max(self.max_len, self.max_width)

    def to_dict(self):
        return asdict(self)


def pad_batch(titles: Sequence[np.ndarray], max_len: int, min_len: int = 1, dim: int | None = None):
    """Right-pad embedding matrices with zero rows to ``max(max_len, min_len)``.

    Returns ``(batch [B, L, d], lengths)``.  A title longer than ``max_len``
    is an error here; truncation happens in :func:`embed_titles`.
    """
    if dim is None:
        if not titles:
            raise ValueError("cannot infer embedding dim from an empty batch")
        dim = titles[0].shape[1]
    length = max(max_len, min_len)
    out = np.zeros((len(titles), length, dim))
    lengths = []
    for i, t in enumerate(titles):
        n = t.shape[0]
        if n > max_len:
            raise ValueError(f"title {i} has {n} tokens, more than max_len={max_len}")
        if n and t.shape[1] != dim:
            raise ValueError(f"title {i} has embedding dim {t.shape[1]}, expected {dim}")
        out[i, :n] = t
        lengths.append(n)
    return out, lengths


def embed_titles(token_lists, table: EmbeddingTable, config: TextCnnConfig):
    """Embed, truncate to ``max_len`` (with a warning) and pad a list of titles."""
    mats = []
    truncated = 0
    for toks in token_lists:
        m, _ = embed_tokens(toks, table)
        if m.shape[0] > config.max_len:
            truncated += 1
            m = m[: config.max_len]
        mats.append(m)
    if truncated:
        log.warning("truncated %d titles to %d tokens", truncated, config.max_len)
    batch, _ = pad_batch(mats, config.max_len, config.max_width, table.dim)
    return batch


class TextCnn:
    def __init__(self, config: TextCnnConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        rng = np.random.default_rng(seed)
        d, c, h, L = config.embed_dim, config.channels, config.hidden, config.num_labels
        self.params = {}
        self.bns = {}
        for w in config.widths:
            self.params[f"conv{w}.F"] = kaiming(rng, w * d, (w, d, c), dtype)
            self.bns[f"bn{w}"] = BatchNorm(c, dtype)
        concat = c * config.max_width
        # no biases ahead of batch norm: its beta already provides the shift
        self.params["fc.W"] = kaiming(rng, concat, (concat, h), dtype)
        self.bns["bnfc"] = BatchNorm(h, dtype)
        self.params["out.W"] = xavier(rng, h, L, (h, L), dtype)
        self.params["out.b"] = np.zeros(L, dtype=dtype)
        # BN affine parameters live in the shared params dict so the optimizer sees them
        for name, bn in self.bns.items():
            self.params[f"{name}.gamma"] = bn.gamma
            self.params[f"{name}.beta"] = bn.beta
        self.grads = {}
        self._cache = None
        self.loss_history: list[float] = []

    def _sync_bn(self):
        for name, bn in self.bns.items():
            bn.gamma = self.params[f"{name}.gamma"]
            bn.beta = self.params[f"{name}.beta"]

    def forward_full(self, x, train=False, key=None):
        """Return ``(scores [B, |L|], features [B, hidden])``."""
        cfg = self.config
        if x.ndim != 3 or x.shape[2] != cfg.embed_dim:
            raise ValueError(f"TextCNN expects [B, n, {cfg.embed_dim}] input, got {x.shape}")
        if x.shape[1] < cfg.max_width:
            raise ValueError(f"input length {x.shape[1]} shorter than the widest filter {cfg.max_width}")
        self._sync_bn()
        p = self.params
        B = x.shape[0]
        pooled, branch = [], []
        for w in cfg.widths:
            z = conv1d_forward(x, p[f"conv{w}.F"])
            t = z.shape[1]
            zn, bn_cache = self.bns[f"bn{w}"].forward(z.reshape(B * t, -1), train)
            zn = zn.reshape(B, t, -1)
            a = relu_forward(zn)
            m, idx = max_over_time_forward(a)
            pooled.append(m)
            branch.append((z, zn, bn_cache, idx, t))
        cat = np.concatenate(pooled, axis=1)
        hz = dense_forward(cat, p["fc.W"])
        hn, hbn_cache = self.bns["bnfc"].forward(hz, train)
        feat = relu_forward(hn)
        dropped, mask = dropout_forward(feat, cfg.dropout, key, train and key is not None)
        out = sigmoid_forward(dense_forward(dropped, p["out.W"], p["out.b"]))
        self._cache = (x, branch, cat, hn, hbn_cache, feat, dropped, mask, out)
        return out, feat

    def forward(self, x, train=False, key=None):
        return self.forward_full(x, train, key)[0]

    def backward(self, dout):
        x, branch, cat, hn, hbn_cache, feat, dropped, mask, out = self._cache
        p = self.params
        g = self.grads
        dz = sigmoid_backward(dout, out)
        ddrop, g["out.W"], g["out.b"] = dense_backward(dz, dropped, p["out.W"])
        dfeat = dropout_backward(ddrop, mask)
        dhn = relu_backward(dfeat, hn)
        dhz, g["bnfc.gamma"], g["bnfc.beta"] = self.bns["bnfc"].backward(dhn, hbn_cache)
        dcat, g["fc.W"], _ = dense_backward(dhz, cat, p["fc.W"])
        dx = np.zeros_like(x)
        c = self.config.channels
        B = x.shape[0]
        for i, w in enumerate(self.config.widths):
            z, zn, bn_cache, idx, t = branch[i]
            da = max_over_time_backward(dcat[:, i * c:(i + 1) * c], idx, t)
            dzn = relu_backward(da, zn)
            dzf, g[f"bn{w}.gamma"], g[f"bn{w}.beta"] = self.bns[f"bn{w}"].backward(dzn.reshape(B * t, -1), bn_cache)
            dxi, g[f"conv{w}.F"], _ = conv1d_backward(dzf.reshape(B, t, -1), x, p[f"conv{w}.F"])
            dx += dxi
        return dx

    def extract_features(self, x):
        return self.forward_full(x, train=False)[1]

    def state(self) -> dict[str, np.ndarray]:
        tensors = dict(self.params)
        for name, bn in self.bns.items():
            tensors[f"{name}.running_mean"] = bn.running_mean
            tensors[f"{name}.running_var"] = bn.running_var
        return tensors

    @classmethod
    def from_state(cls, config: TextCnnConfig, tensors: dict) -> "TextCnn":
        model = cls(config)
        for name in list(model.params):
            if name not in tensors:
                raise DataError(f"checkpoint is missing tensor {name!r}")
            if tensors[name].shape != model.params[name].shape:
                raise DataError(f"tensor {name!r} has shape {tensors[name].shape}, "
                                f"config expects {model.params[name].shape}")
            model.params[name] = np.array(tensors[name])
        for name, bn in model.bns.items():
            bn.running_mean = np.array(tensors[f"{name}.running_mean"])
            bn.running_var = np.array(tensors[f"{name}.running_var"])
        model._sync_bn()
        return model


def textcnn_forward(model: TextCnn, batch, train=False, key=None):
    return model.forward_full(batch, train, key)


def textcnn_extract_features(model: TextCnn, batch):
    return model.extract_features(batch)


def textcnn_train(batch, labels, config: TextCnnConfig, *, epochs=5, batch_size=512, seed=0,
                  lr=1e-3, weight_decay=1e-7) -> TextCnn:
    batch = np.asarray(batch)
    labels = np.asarray(labels, dtype=np.float64)
    if len(batch) == 0:
        raise ValueError("textcnn_train needs a non-empty training set")
    model = TextCnn(config, seed, dtype=batch.dtype if batch.dtype == np.float32 else np.float64)
    model.loss_history = fit_bce(model, batch, labels, epochs=epochs, batch_size=batch_size,
                                 lr=lr, weight_decay=weight_decay, seed=seed + 1)
    return model
