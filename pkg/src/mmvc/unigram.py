"""Unigram (naive Bayes) text baseline with add-alpha smoothing.

score(l | k_1..k_m) = n(l)/n(o) * prod_i (n(k_i, l) + alpha) / (n(l) + alpha*|L|)

where n(l) counts training videos carrying label l, n(k, l) counts (token,
label) co-occurrences and n(o) is the number of training videos.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, DataError

DEFAULT_ALPHA = 0.001


@dataclass
class UnigramCounts:
    num_labels: int
    alpha: float = DEFAULT_ALPHA
    total: int = 0
    label_count: np.ndarray = None
    joint_count: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.label_count is None:
            self.label_count = np.zeros(self.num_labels, dtype=np.int64)

    def add(self, tokens: Sequence[str], labels) -> None:
        labels = sorted(labels)
        self.total += 1
        self.label_count[labels] += 1
        for tok in tokens:
            row = self.joint_count.get(tok)
            if row is None:
                row = self.joint_count[tok] = np.zeros(self.num_labels, dtype=np.int64)
            row[labels] += 1

    def log_scores(self, tokens: Sequence[str]) -> np.ndarray:
        if self.total == 0:
            raise ValueError("model has not been fitted")
        n_l = self.label_count.astype(np.float64)
        # log(0) for labels never seen in training; those score exactly 0
        with np.errstate(divide="ignore"):
            out = np.log(n_l) - np.log(self.total)
        log_denom = np.log(n_l + self.alpha * self.num_labels)
        unseen = np.log(self.alpha) - log_denom
        for tok in tokens:
            row = self.joint_count.get(tok)
            if row is None:
                out += unseen
            else:
                out += np.log(row + self.alpha) - log_denom
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            header = {
                "alpha": self.alpha,
                "num_labels": self.num_labels,
                "total": self.total,
                "label_counts": self.label_count.tolist(),
            }
            f.write(json.dumps(header) + "\n")
            for tok in sorted(self.joint_count):
                row = self.joint_count[tok]
                nz = np.flatnonzero(row)
                pairs = [[int(l), int(row[l])] for l in nz]
                f.write(json.dumps({"token": tok, "counts": pairs}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path) -> "UnigramCounts":
        path = Path(path)
        if not path.exists():
            raise DataError(f"unigram model not found: {path}")
        with open(path, encoding="utf-8") as f:
            try:
                header = json.loads(f.readline())
                model = cls(
                    num_labels=int(header["num_labels"]),
                    alpha=float(header["alpha"]),
                    total=int(header["total"]),
                    label_count=np.array(header["label_counts"], dtype=np.int64),
                )
                for line in f:
                    if not line.strip():
                        continue
                    obj = json.loads(line)
                    row = np.zeros(model.num_labels, dtype=np.int64)
                    for l, c in obj["counts"]:
                        row[l] = c
                    model.joint_count[obj["token"]] = row
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as e:
                raise DataError(f"{path}: malformed unigram model ({e})") from None
        if model.label_count.shape != (model.num_labels,):
            raise DataError(f"{path}: label_counts length does not match num_labels")
        return model


def unigram_fit(ds: Dataset, source: str, alpha: float = DEFAULT_ALPHA) -> UnigramCounts:
    if len(ds) == 0:
        raise DataError("cannot fit a unigram model on an empty dataset")
    model = UnigramCounts(num_labels=ds.num_labels, alpha=alpha)
    for r in ds.records:
        model.add(r.tokens(source), r.labels)
    return model


def unigram_predict(model: UnigramCounts, tokens: Sequence[str]) -> np.ndarray:
    """Per-label scores of the smoothed product, accumulated in log space.

    The log scores are exponentiated after subtracting their maximum and then
    multiplied back by ``exp(max)``.  When that factor underflows (very long
    token lists) the max-normalized vector is returned instead; it differs
    from the exact product by one positive factor, so rankings are unchanged.
    For an empty token list the scores are the label priors n(l)/n(o).
    """
    logs = model.log_scores(tokens)
    top = logs.max()
    rel = np.exp(logs - top)
    scale = np.exp(top)
    if scale < np.finfo(np.float64).tiny:
        return rel
    return rel * scale


def unigram_posterior(model: UnigramCounts, tokens: Sequence[str]) -> np.ndarray:
    """Scores normalized to sum to one (posterior over labels)."""
    logs = model.log_scores(tokens)
    logs = logs - logs.max()
    p = np.exp(logs)
    return p / p.sum()


def unigram_score_matrix(model: UnigramCounts, token_lists: Sequence[Sequence[str]]) -> np.ndarray:
    return np.stack([unigram_posterior(model, toks) for toks in token_lists]) if token_lists else np.zeros((0, model.num_labels))
