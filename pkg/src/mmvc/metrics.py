"""Multi-label ranking metrics: GAP@k, mAP, Hit@1, PERR and per-label GAP.

Tie-breaking is fixed so results are bit-reproducible:

* GAP pools (video, label, confidence) triples and sorts by confidence
  descending, then video position, then label index;
* per-class rankings (mAP) put the smaller video index first;
* per-video rankings (Hit@1, PERR) put the smaller label index first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import PredictionList


@dataclass
class EvalReport:
    gap: float
    map: float
    hit_at_1: float
    perr: float
    videos: int
    positives: int
    per_label_gap: dict[int, float] | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "gap": self.gap,
            "map": self.map,
            "hit_at_1": self.hit_at_1,
            "perr": self.perr,
            "counts": {"videos": self.videos, "positives": self.positives},
        }


def _truth_sets(truth) -> list[frozenset[int]]:
    if isinstance(truth, np.ndarray):
        return [frozenset(np.flatnonzero(row > 0).tolist()) for row in truth]
    return [frozenset(t) for t in truth]


def _truth_matrix(truth, shape) -> np.ndarray:
    if isinstance(truth, np.ndarray):
        y = truth > 0
    else:
        y = np.zeros(shape, dtype=bool)
        for i, labels in enumerate(truth):
            y[i, list(labels)] = True
    if y.shape != shape:
        raise ValueError(f"truth shape {y.shape} does not match scores {shape}")
    return y


def average_precision(hits: np.ndarray, num_positives: int) -> float:
    """Non-interpolated AP of a ranked 0/1 hit vector: sum of precision at each hit / P."""
    hits = np.asarray(hits, dtype=np.float64)
    if num_positives <= 0:
        raise ValueError("average precision needs at least one positive")
    if hits.size == 0:
        return 0.0
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float((precision * hits).sum() / num_positives)


def _pooled(preds: Sequence[PredictionList], k: int):
    conf, vid, lab = [], [], []
    for i, p in enumerate(preds):
        for l, c in p.pairs[:k]:
            conf.append(c)
            vid.append(i)
            lab.append(l)
    conf = np.array(conf, dtype=np.float64)
    vid = np.array(vid, dtype=np.int64)
    lab = np.array(lab, dtype=np.int64)
    order = np.lexsort((lab, vid, -conf))
    return conf[order], vid[order], lab[order]


def gap_at_k(preds: Sequence[PredictionList], truth, k: int = 20) -> float:
    """Global average precision of the pooled top-k predictions.

    ``truth`` is aligned with ``preds``; the recall denominator is the total
    number of ground-truth labels, not capped at k per video.
    """
    truth = _truth_sets(truth)
    if len(truth) != len(preds):
        raise ValueError(f"{len(preds)} prediction lists but {len(truth)} truth rows")
    positives = sum(len(t) for t in truth)
    if positives == 0:
        raise ValueError("GAP is undefined without any ground-truth labels")
    _, vid, lab = _pooled(preds, k)
    hits = np.array([lab[i] in truth[vid[i]] for i in range(len(lab))], dtype=np.float64)
    return average_precision(hits, positives)


def per_label_gap(preds: Sequence[PredictionList], truth, k: int = 20) -> dict[int, float]:
    """GAP restricted to one label at a time; labels without positives are absent."""
    truth = _truth_sets(truth)
    if len(truth) != len(preds):
        raise ValueError(f"{len(preds)} prediction lists but {len(truth)} truth rows")
    positives: dict[int, int] = {}
    for t in truth:
        for l in t:
            positives[l] = positives.get(l, 0) + 1
    _, vid, lab = _pooled(preds, k)
    out = {}
    for l in sorted(positives):
        sel = lab == l
        hits = np.array([l in truth[v] for v in vid[sel]], dtype=np.float64)
        out[l] = average_precision(hits, positives[l])
    return out


def mean_average_precision(scores, truth) -> float:
    """Unweighted mean of per-class AP over classes with at least one positive."""
    scores = np.asarray(scores, dtype=np.float64)
    y = _truth_matrix(truth, scores.shape)
    aps = []
    for c in range(scores.shape[1]):
        P = int(y[:, c].sum())
        if P == 0:
            continue
        order = np.argsort(-scores[:, c], kind="stable")
        aps.append(average_precision(y[order, c], P))
    if not aps:
        raise ValueError("mAP is undefined when no class has a positive")
    return float(np.mean(aps))


def _top_labels(scores, j):
    return np.argsort(-scores, kind="stable")[:j]


def hit_at_1(scores_or_preds, truth) -> float:
    """Fraction of videos whose single top prediction is a true label."""
    truth = _truth_sets(truth)
    if isinstance(scores_or_preds, np.ndarray):
        scores = np.asarray(scores_or_preds, dtype=np.float64)
        if scores.shape[0] != len(truth):
            raise ValueError("scores and truth are not aligned")
        if scores.shape[1] == 0:
            raise ValueError("no predictions")
        tops = np.argmax(scores, axis=1)
    else:
        preds = list(scores_or_preds)
        if len(preds) != len(truth):
            raise ValueError("predictions and truth are not aligned")
        tops = []
        for p in preds:
            if not p.pairs:
                raise ValueError(f"video {p.video_id!r} has no predictions")
            tops.append(p.pairs[0][0])
    if not len(truth):
        raise ValueError("Hit@1 of an empty set is undefined")
    return float(np.mean([int(t) in labels for t, labels in zip(tops, truth)]))


def perr(scores, truth) -> float:
    """Mean precision of the top-j labels, j = the video's number of true labels.

    Videos without ground truth are skipped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = _truth_sets(truth)
    if scores.shape[0] != len(truth):
        raise ValueError("scores and truth are not aligned")
    vals = []
    for row, labels in zip(scores, truth):
        j = len(labels)
        if j == 0:
            continue
        top = _top_labels(row, j)
        vals.append(sum(int(l) in labels for l in top) / j)
    if not vals:
        raise ValueError("PERR is undefined when no video has ground truth")
    return float(np.mean(vals))


def evaluate_all(preds: Sequence[PredictionList], scores, truth, k: int = 20,
                 with_per_label: bool = False) -> EvalReport:
    """GAP from the top-k lists; mAP, Hit@1 and PERR from the score matrix."""
    truth = _truth_sets(truth)
    scores = np.asarray(scores, dtype=np.float64)
    if [p.video_id for p in preds] and scores.shape[0] != len(preds):
        raise ValueError("predictions and score matrix are not aligned")
    return EvalReport(
        gap=gap_at_k(preds, truth, k),
        map=mean_average_precision(scores, truth),
        hit_at_1=hit_at_1(scores, truth),
        perr=perr(scores, truth),
        videos=len(truth),
        positives=sum(len(t) for t in truth),
        per_label_gap=per_label_gap(preds, truth, k) if with_per_label else None,
    )


def label_frequency_order(truth: Iterable, num_labels: int) -> list[int]:
    """Label indices sorted by positive count (descending), ties by index."""
    counts = np.zeros(num_labels, dtype=np.int64)
    for t in _truth_sets(list(truth)):
        for l in t:
            counts[l] += 1
    return sorted(range(num_labels), key=lambda l: (-counts[l], l))
