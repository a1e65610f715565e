"""Score-level ensembling: average pooling, max pooling and a random forest.

The forest treats every (video, class) pair as one instance whose features
are the M models' scores for that pair and whose target is class
membership.  Each tree votes 0/1; the ensemble score is the fraction of
trees voting 1, so thresholding at one half recovers the mode.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DataError


@dataclass(frozen=True)
class ScoreMatrix:
    ids: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != len(self.ids):
            raise ValueError(f"scores shape {s.shape} does not match {len(self.ids)} ids")
        object.__setattr__(self, "scores", s)

    @property
    def num_labels(self) -> int:
        return self.scores.shape[1]


def _check_aligned(mats: Sequence[ScoreMatrix]):
    if not mats:
        raise ValueError("need at least one score matrix")
    first = mats[0]
    for m in mats[1:]:
        if m.ids != first.ids:
            raise ValueError("score matrices are not aligned on video ids")
        if m.scores.shape != first.scores.shape:
            raise ValueError(f"score matrix shapes differ: {m.scores.shape} vs {first.scores.shape}")


def average_pool(mats: Sequence[ScoreMatrix]) -> ScoreMatrix:
    _check_aligned(mats)
    stack = np.array([m.scores for m in mats])
    # mean as an offset from the first input, so k copies of one matrix come back bit-exact;
    # the clip keeps roundoff inside the [min, max] envelope
    mean = stack[0] + (stack - stack[0]).sum(axis=0) / len(mats)
    return ScoreMatrix(mats[0].ids, np.clip(mean, stack.min(axis=0), stack.max(axis=0)))


def max_pool(mats: Sequence[ScoreMatrix]) -> ScoreMatrix:
    _check_aligned(mats)
    return ScoreMatrix(mats[0].ids, np.max([m.scores for m in mats], axis=0))


# -- decision trees -----------------------------------------------------------


@dataclass
class Tree:
    """Flat binary tree in preorder.

    Internal node i splits on ``feature[i] <= threshold[i]`` (left) and has
    children ``left[i]``/``right[i]``; leaves have ``feature[i] == -1`` and
    hold a 0/1 ``vote[i]``.
    """

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    vote: list[int] = field(default_factory=list)

    def _add(self, feature=-1, threshold=0.0, vote=0):
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.vote.append(vote)
        return len(self.feature) - 1

    def predict(self, x: np.ndarray) -> np.ndarray:
        feat = np.array(self.feature)
        thr = np.array(self.threshold)
        left = np.array(self.left)
        right = np.array(self.right)
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            f = feat[node]
            active = f >= 0
            if not active.any():
                break
            a = rows[active]
            go_left = x[a, f[active]] <= thr[node[active]]
            node[a] = np.where(go_left, left[node[a]], right[node[a]])
        return np.array(self.vote)[node]

    def to_json(self) -> dict:
        nodes = []
        for i in range(len(self.feature)):
            if self.feature[i] < 0:
                nodes.append({"vote": self.vote[i]})
            else:
                nodes.append({"feature": self.feature[i], "threshold": self.threshold[i],
                              "left": self.left[i], "right": self.right[i]})
        return {"nodes": nodes}

    @classmethod
    def from_json(cls, obj) -> "Tree":
        t = cls()
        for n in obj["nodes"]:
            if "vote" in n:
                t._add(vote=int(n["vote"]))
            else:
                i = t._add(int(n["feature"]), float(n["threshold"]))
                t.left[i] = int(n["left"])
                t.right[i] = int(n["right"])
        return t


def _gini(pos, n):
    p = pos / n
    return 2.0 * p * (1.0 - p)


def _best_split(x, y, features):
    """Lowest weighted-Gini threshold split over ``features`` or None."""
    n = len(y)
    parent = _gini(y.sum(), n)
    best = None
    best_score = parent
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        ys = y[order]
        # candidate cut after position i (left = first i+1 rows) where values change
        cut = np.flatnonzero(xs[:-1] < xs[1:])
        if cut.size == 0:
            continue
        cpos = np.cumsum(ys)[cut]
        nl = cut + 1.0
        nr = n - nl
        pl = cpos / nl
        pr = (y.sum() - cpos) / nr
        score = (nl * 2 * pl * (1 - pl) + nr * 2 * pr * (1 - pr)) / n
        i = int(np.argmin(score))
        if score[i] < best_score - 1e-12:
            best_score = score[i]
            lo, hi = xs[cut[i]], xs[cut[i] + 1]
            thr = (lo + hi) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (int(f), float(thr))
    return best


def build_tree(x, y, max_depth, rng, max_features=None) -> Tree:
    tree = Tree()
    M = x.shape[1]
    n_feat = M if max_features is None else max_features

    def grow(idx, depth):
        ys = y[idx]
        pos = ys.sum()
        vote = int(pos * 2 > len(ys))
        if depth >= max_depth or pos == 0 or pos == len(ys):
            return tree._add(vote=vote)
        feats = np.arange(M) if n_feat >= M else np.sort(rng.choice(M, n_feat, replace=False))
        split = _best_split(x[idx], ys, feats)
        if split is None:
            return tree._add(vote=vote)
        f, thr = split
        node = tree._add(f, thr)
        mask = x[idx, f] <= thr
        tree.left[node] = grow(idx[mask], depth + 1)
        tree.right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return tree


@dataclass
class ForestModel:
    trees: list[Tree]
    num_features: int
    max_depth: int
    seed: int

    @property
    def num_trees(self):
        return len(self.trees)

    def vote_fraction(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.num_features:
            raise ValueError(f"forest was trained on {self.num_features} models, got {x.shape[1]}")
        votes = np.zeros(len(x))
        for t in self.trees:
            votes += t.predict(x)
        return votes / len(self.trees)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps({"num_features": self.num_features, "max_depth": self.max_depth,
                                "seed": self.seed, "num_trees": self.num_trees}) + "\n")
            for t in self.trees:
                f.write(json.dumps(t.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "ForestModel":
        path = Path(path)
        if not path.exists():
            raise DataError(f"forest checkpoint not found: {path}")
        with open(path, encoding="utf-8") as f:
            try:
                header = json.loads(f.readline())
                trees = [Tree.from_json(json.loads(line)) for line in f if line.strip()]
                return cls(trees, int(header["num_features"]), int(header["max_depth"]), int(header["seed"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}: malformed forest checkpoint ({e})") from None


def pair_features(mats: Sequence[ScoreMatrix]) -> np.ndarray:
    """[n * |L|, M] matrix of per-(video, class) model scores, row-major over videos."""
    _check_aligned(mats)
    return np.stack([m.scores.reshape(-1) for m in mats], axis=1)


def _truth_matrix(truth, shape):
    if isinstance(truth, np.ndarray):
        y = np.asarray(truth, dtype=np.float64)
    else:
        y = np.zeros(shape)
        for i, labels in enumerate(truth):
            y[i, list(labels)] = 1.0
    if y.shape != shape:
        raise ValueError(f"truth shape {y.shape} does not match scores {shape}")
    return y


def forest_train(mats: Sequence[ScoreMatrix], truth, num_trees=1000, max_depth=6, seed=0) -> ForestModel:
    """Fit a bootstrap forest of Gini trees on held-out model scores.

    Each split considers ``floor(sqrt(M))`` random features, or all of them
    when M < 4.
    """
    if len(mats) < 2:
        raise ValueError("a forest ensemble needs at least two models")
    x = pair_features(mats)
    y = _truth_matrix(truth, mats[0].scores.shape).reshape(-1)
    M = x.shape[1]
    max_features = None if M < 4 else int(math.isqrt(M))
    trees = []
    for t in range(num_trees):
        rng = np.random.default_rng([seed, t])
        idx = rng.integers(0, len(y), size=len(y))
        xb, yb = x[idx], y[idx]
        trees.append(build_tree(xb, yb, max_depth, rng, max_features))
    return ForestModel(trees, M, max_depth, seed)


def forest_predict(model: ForestModel, mats: Sequence[ScoreMatrix]) -> ScoreMatrix:
    x = pair_features(mats)
    frac = model.vote_fraction(x)
    return ScoreMatrix(mats[0].ids, frac.reshape(mats[0].scores.shape))
