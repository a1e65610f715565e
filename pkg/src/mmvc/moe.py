"""Mixture-of-experts classifier over concatenated modality features.

For every class c the model mixes E logistic experts with a softmax gate:

    score_c(x) = sum_e softmax_e(x @ Wg[:, c, e]) * sigmoid(x @ We[:, c, e] + be[c, e])

With E = 1 the gate is identically 1 and the model is per-class logistic
regression.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .data import DataError, PredictionList, top_k
from .nn import sigmoid_forward, softmax_backward, softmax_forward, xavier
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.train import fit_bce

MODALITIES = ("visual", "audio", "keyword", "title")
TEXT_MODALITIES = ("keyword", "title")
DEFAULT_EXPERTS = 8


def canonical_modalities(names: Sequence[str]) -> tuple[str, ...]:
    unknown = set(names) - set(MODALITIES)
    if unknown:
        raise ValueError(f"unknown modalities {sorted(unknown)}; choose from {', '.join(MODALITIES)}")
    return tuple(m for m in MODALITIES if m in names)


def concat_features(inputs: Mapping[str, np.ndarray | None], enabled: Sequence[str],
                    dims: Mapping[str, int]) -> np.ndarray:
    """Concatenate enabled modalities in the fixed order visual, audio, keyword, title.

    A missing text modality (None) becomes a zero vector of its nominal dim;
    missing visual/audio input is an error.
    """
    order = canonical_modalities(enabled)
    if not order:
        raise ValueError("at least one modality must be enabled")
    parts = []
    for m in order:
        v = inputs.get(m)
        if v is None:
            if m not in TEXT_MODALITIES:
                raise ValueError(f"modality {m!r} is enabled but missing")
            v = np.zeros(dims[m])
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (dims[m],):
            raise ValueError(f"modality {m!r} has dim {v.shape[0] if v.ndim == 1 else v.shape}, expected {dims[m]}")
        parts.append(v)
    return np.concatenate(parts)


def concat_matrix(blocks: Mapping[str, np.ndarray], enabled: Sequence[str]) -> np.ndarray:
    """Batched :func:`concat_features` over aligned ``n x dim`` blocks."""
    order = canonical_modalities(enabled)
    if not order:
        raise ValueError("at least one modality must be enabled")
    missing = [m for m in order if m not in blocks]
    if missing:
        raise ValueError(f"no feature block for enabled modality {missing[0]!r}")
    return np.concatenate([np.asarray(blocks[m], dtype=np.float64) for m in order], axis=1)


class Moe:
    def __init__(self, input_dim, num_labels, num_experts=DEFAULT_EXPERTS, seed=0, dtype=np.float64,
                 modalities: Sequence[str] = (), modality_dims: Mapping[str, int] | None = None):
        if num_experts < 1:
            raise ValueError("num_experts must be >= 1")
        rng = np.random.default_rng(seed)
        LE = num_labels * num_experts
        self.num_labels = num_labels
        self.num_experts = num_experts
        self.modalities = canonical_modalities(modalities)
        self.modality_dims = dict(modality_dims or {})
        self.params = {
            "gate.W": xavier(rng, input_dim, num_experts, (input_dim, LE), dtype),
            "expert.W": xavier(rng, input_dim, 1, (input_dim, LE), dtype),
            "expert.b": np.zeros(LE, dtype=dtype),
        }
        self.grads = {}
        self._cache = None
        self.loss_history: list[float] = []

    @property
    def input_dim(self):
        return self.params["gate.W"].shape[0]

    def forward_parts(self, x):
        """Return ``(scores, gate [B,L,E], expert [B,L,E])``."""
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"MoE expects [B, {self.input_dim}] input, got {x.shape}")
        B = x.shape[0]
        shape = (B, self.num_labels, self.num_experts)
        p = self.params
        gate = softmax_forward((x @ p["gate.W"]).reshape(shape), axis=-1)
        expert = sigmoid_forward((x @ p["expert.W"] + p["expert.b"]).reshape(shape))
        return (gate * expert).sum(axis=-1), gate, expert

    def forward(self, x, train=False, key=None):
        scores, gate, expert = self.forward_parts(x)
        self._cache = (x, gate, expert)
        return scores

    def backward(self, dscores):
        x, gate, expert = self._cache
        B = x.shape[0]
        d = dscores[..., None]
        dgate_logits = softmax_backward(d * expert, gate, axis=-1).reshape(B, -1)
        dexp_logits = (d * gate * expert * (1.0 - expert)).reshape(B, -1)
        p = self.params
        self.grads["gate.W"] = x.T @ dgate_logits
        self.grads["expert.W"] = x.T @ dexp_logits
        self.grads["expert.b"] = dexp_logits.sum(axis=0)
        return dgate_logits @ p["gate.W"].T + dexp_logits @ p["expert.W"].T

    def predict(self, x):
        return self.forward_parts(np.asarray(x, dtype=np.float64))[0]

    def state(self) -> dict[str, np.ndarray]:
        tensors = dict(self.params)
        tensors["modalities.mask"] = np.array([m in self.modalities for m in MODALITIES], dtype=np.float64)
        tensors["modalities.dims"] = np.array([self.modality_dims.get(m, 0) for m in MODALITIES], dtype=np.float64)
        tensors["num_experts"] = np.array([self.num_experts], dtype=np.float64)
        return tensors

    def save(self, path):
        save_checkpoint(path, self.state())

    @classmethod
    def load(cls, path) -> "Moe":
        t = load_checkpoint(path)
        try:
            input_dim, LE = t["gate.W"].shape
            mask = t["modalities.mask"]
            dims = t["modalities.dims"]
            # |L| * E columns cannot be factored without the stored expert count
            E = int(round(t["num_experts"][0]))
        except KeyError as e:
            raise DataError(f"{path}: missing tensor {e.args[0]!r}") from None
        if E < 1 or LE % E:
            raise DataError(f"{path}: inconsistent expert count {E}")
        mods = [m for m, on in zip(MODALITIES, mask) if on]
        mdims = {m: int(d) for m, d, on in zip(MODALITIES, dims, mask) if on}
        model = cls(input_dim, LE // E, E, modalities=mods, modality_dims=mdims)
        for name in ("gate.W", "expert.W", "expert.b"):
            model.params[name] = np.array(t[name])
        return model


def moe_forward(model: Moe, x) -> np.ndarray:
    return model.predict(x)


def moe_train(features, labels, num_experts=DEFAULT_EXPERTS, *, lr=1e-3, batch_size=256, epochs=20,
              seed=0, weight_decay=0.0, modalities=(), modality_dims=None) -> Moe:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(features) == 0:
        raise ValueError("moe_train needs a non-empty training set")
    if labels.shape[0] != features.shape[0]:
        raise ValueError("features and labels are not aligned")
    model = Moe(features.shape[1], labels.shape[1], num_experts, seed,
                modalities=modalities, modality_dims=modality_dims)
    model.loss_history = fit_bce(model, features, labels, epochs=epochs, batch_size=batch_size,
                                 lr=lr, weight_decay=weight_decay, seed=seed + 1)
    return model


def moe_predict_topk(model: Moe, x, ids: Sequence[str], k: int = 20) -> list[PredictionList]:
    if k > model.num_labels:
        raise ValueError(f"k={k} exceeds the number of labels {model.num_labels}")
    return top_k(model.predict(x), ids, k)
