"""Video records, datasets, splits and the on-disk formats around them.

Formats handled here:

* label vocabulary: UTF-8 text, one label name per line (line number = index)
* manifest: JSONL, one video per line
* feature bank: little-endian binary, magic ``MMF1``
* predictions: Kaggle-style CSV ``VideoId,LabelConfidencePairs``
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

VISUAL_DIM = 1024
AUDIO_DIM = 128

BANK_MAGIC = b"MMF1"
PREDICTIONS_HEADER = ("VideoId", "LabelConfidencePairs")


class DataError(ValueError):
    """Raised for malformed or inconsistent input files."""


@dataclass(frozen=True)
class LabelVocabulary:
    names: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, name in enumerate(self.names):
            if name in index:
                raise DataError(f"duplicate label name {name!r}")
            index[name] = i
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.names)

    def lookup(self, label: int | str) -> int:
        """Resolve a label index or name, raising DataError when unknown."""
        if isinstance(label, bool):
            raise DataError(f"unknown label {label!r}")
        if isinstance(label, int):
            if 0 <= label < len(self.names):
                return label
            raise DataError(f"unknown label {label} (vocabulary has {len(self.names)})")
        if isinstance(label, str) and label in self.index:
            return self.index[label]
        raise DataError(f"unknown label name {label!r}")

    @classmethod
    def load(cls, path) -> "LabelVocabulary":
        path = Path(path)
        if not path.exists():
            raise DataError(f"label file not found: {path}")
        names = path.read_text(encoding="utf-8").splitlines()
        while names and not names[-1].strip():
            names.pop()
        for i, name in enumerate(names):
            if not name.strip():
                raise DataError(f"{path}:{i + 1}: empty label name")
        return cls(tuple(n.strip() for n in names))

    def save(self, path) -> None:
        Path(path).write_text("".join(n + "\n" for n in self.names), encoding="utf-8")


@dataclass(frozen=True)
class VideoRecord:
    id: str
    labels: frozenset[int]
    visual: np.ndarray
    audio: np.ndarray
    title_tokens: tuple[str, ...] = ()
    keyword_tokens: tuple[str, ...] = ()

    def tokens(self, source: str) -> tuple[str, ...]:
        if source == "titles":
            return self.title_tokens
        if source == "keywords":
            return self.keyword_tokens
        raise ValueError(f"unknown text source {source!r}; expected 'keywords' or 'titles'")


@dataclass(frozen=True)
class Dataset:
    records: tuple[VideoRecord, ...]
    vocab: LabelVocabulary
    dims: tuple[int, int] = (VISUAL_DIM, AUDIO_DIM)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise DataError(f"duplicate video id {r.id!r}")
            seen.add(r.id)
            if r.visual.shape != (self.dims[0],) or r.audio.shape != (self.dims[1],):
                raise DataError(
                    f"record {r.id!r}: feature dims {r.visual.shape[0]}/{r.audio.shape[0]} "
                    f"do not match dataset dims {self.dims[0]}/{self.dims[1]}"
                )
            for l in r.labels:
                if not 0 <= l < len(self.vocab):
                    raise DataError(f"record {r.id!r}: unknown label {l}")

    def __len__(self):
        return len(self.records)

    @property
    def num_labels(self) -> int:
        return len(self.vocab)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.records[i] for i in indices), self.vocab, self.dims)

    def replace_records(self, records: Sequence[VideoRecord]) -> "Dataset":
        return Dataset(tuple(records), self.vocab, self.dims)

    def label_matrix(self) -> np.ndarray:
        """Binary ``n x |L|`` ground-truth matrix."""
        y = np.zeros((len(self.records), self.num_labels))
        for i, r in enumerate(self.records):
            y[i, list(r.labels)] = 1.0
        return y

    def truth(self) -> list[frozenset[int]]:
        return [r.labels for r in self.records]

    def visual_matrix(self) -> np.ndarray:
        return np.stack([r.visual for r in self.records]) if self.records else np.zeros((0, self.dims[0]))

    def audio_matrix(self) -> np.ndarray:
        return np.stack([r.audio for r in self.records]) if self.records else np.zeros((0, self.dims[1]))


# -- feature bank -------------------------------------------------------------


def save_feature_bank(path, visual: np.ndarray, audio: np.ndarray) -> None:
    visual = np.asarray(visual)
    audio = np.asarray(audio)
    if visual.ndim != 2 or audio.ndim != 2 or visual.shape[0] != audio.shape[0]:
        raise ValueError("visual and audio must be 2-d with the same row count")
    rows = np.concatenate([visual, audio], axis=1).astype("<f4")
    with open(path, "wb") as f:
        f.write(BANK_MAGIC)
        f.write(struct.pack("<III", visual.shape[0], visual.shape[1], audio.shape[1]))
        f.write(rows.tobytes())


def load_feature_bank(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(visual, audio)`` float64 matrices from an ``MMF1`` bank."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature bank not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != BANK_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise DataError(f"{path}: truncated header")
    n, vdim, adim = struct.unpack_from("<III", raw, 4)
    expected = 16 + 4 * n * (vdim + adim)
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {n} rows, found {len(raw)}")
    rows = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, vdim + adim).astype(np.float64)
    return rows[:, :vdim], rows[:, vdim:]


# -- manifest ---------------------------------------------------------------


def _parse_manifest_line(obj, lineno, vocab, dims, bank):
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    vid = obj.get("id")
    if not isinstance(vid, str) or not vid:
        raise DataError(f"line {lineno}: missing or non-string 'id'")
    raw_labels = obj.get("labels", [])
    if not isinstance(raw_labels, list):
        raise DataError(f"line {lineno}: 'labels' must be an array")
    try:
        labels = frozenset(vocab.lookup(l) for l in raw_labels)
    except DataError as e:
        raise DataError(f"line {lineno}: {e}") from None

    if "bank_row" in obj:
        if bank is None:
            raise DataError(f"line {lineno}: 'bank_row' given but no feature bank configured")
        row = obj["bank_row"]
        if not isinstance(row, int) or not 0 <= row < bank[0].shape[0]:
            raise DataError(f"line {lineno}: bank_row {row!r} out of range")
        visual, audio = bank[0][row].copy(), bank[1][row].copy()
    else:
        try:
            visual = np.asarray(obj["visual"], dtype=np.float64)
            audio = np.asarray(obj["audio"], dtype=np.float64)
        except KeyError as e:
            raise DataError(f"line {lineno}: missing {e.args[0]!r} (and no 'bank_row')") from None
        except (TypeError, ValueError):
            raise DataError(f"line {lineno}: non-numeric feature values") from None
    if visual.shape != (dims[0],):
        raise DataError(f"line {lineno}: visual dim {visual.size} != configured {dims[0]}")
    if audio.shape != (dims[1],):
        raise DataError(f"line {lineno}: audio dim {audio.size} != configured {dims[1]}")

    title = obj.get("title", "")
    keywords = obj.get("keywords", [])
    if not isinstance(title, str):
        raise DataError(f"line {lineno}: 'title' must be a string")
    if not isinstance(keywords, list) or not all(isinstance(k, str) for k in keywords):
        raise DataError(f"line {lineno}: 'keywords' must be an array of strings")
    return VideoRecord(
        id=vid,
        labels=labels,
        visual=visual,
        audio=audio,
        title_tokens=tuple(title.split()),
        keyword_tokens=tuple(k for k in keywords if k),
    )


def load_manifest(path, vocab: LabelVocabulary, dims=(VISUAL_DIM, AUDIO_DIM), bank=None) -> Dataset:
    """Read a JSONL manifest into a Dataset.

    ``bank`` is either a path to an ``MMF1`` feature bank or an already loaded
    ``(visual, audio)`` pair; it is required only when lines use ``bank_row``.
    Titles are whitespace-split and keywords kept as given; normalization is a
    separate step.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    if bank is not None and not isinstance(bank, tuple):
        bank = load_feature_bank(bank)
    if bank is not None and (bank[0].shape[1], bank[1].shape[1]) != tuple(dims):
        raise DataError(
            f"feature bank dims {bank[0].shape[1]}/{bank[1].shape[1]} do not match configured {dims[0]}/{dims[1]}"
        )
    records = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON ({e.msg})") from None
            rec = _parse_manifest_line(obj, lineno, vocab, tuple(dims), bank)
            if rec.id in seen:
                raise DataError(f"line {lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return Dataset(tuple(records), vocab, tuple(dims))


def load_truth(path) -> dict[str, frozenset[int]]:
    """Read only ``id`` and ``labels`` (integer indices) from a manifest."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    truth = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                vid = obj["id"]
                labels = frozenset(int(l) for l in obj.get("labels", []))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise DataError(f"line {lineno}: malformed manifest line") from None
            if vid in truth:
                raise DataError(f"line {lineno}: duplicate id {vid!r}")
            truth[vid] = labels
    return truth


def write_manifest(path, ds: Dataset, bank_rows: Sequence[int] | None = None) -> None:
    """Write ``ds`` as JSONL; features go inline unless ``bank_rows`` is given."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, r in enumerate(ds.records):
            obj = {"id": r.id, "labels": sorted(r.labels)}
            if r.title_tokens:
                obj["title"] = " ".join(r.title_tokens)
            if r.keyword_tokens:
                obj["keywords"] = list(r.keyword_tokens)
            if bank_rows is not None:
                obj["bank_row"] = int(bank_rows[i])
            else:
                obj["visual"] = [float(v) for v in r.visual]
                obj["audio"] = [float(v) for v in r.audio]
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


# -- splitting ----------------------------------------------------------------


def split_sizes(n: int, fractions: tuple[float, float]) -> tuple[int, int]:
    train, dev = fractions
    n_train = round(train * n)
    n_dev = round(dev * n)
    if n_train + n_dev > n:
        n_dev = n - n_train
    return n - n_dev, n_dev


def split_dataset(ds: Dataset, fractions: tuple[float, float], seed: int) -> tuple[Dataset, Dataset]:
    """Seeded disjoint train/dev partition. Leftover rows go to train."""
    train, dev = fractions
    if not 0 < train < 1:
        raise ValueError(f"train fraction must be in (0, 1), got {train}")
    if abs(train + dev - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {train} + {dev}")
    n = len(ds)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    _, n_dev = split_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    dev_idx = np.sort(perm[:n_dev])
    train_idx = np.sort(perm[n_dev:])
    return ds.subset(train_idx.tolist()), ds.subset(dev_idx.tolist())


def sample_indices(n: int, sample: float, seed: int) -> np.ndarray:
    """Seeded subsample: ``sample < 1`` is a fraction, otherwise a count."""
    if sample <= 0:
        raise ValueError("sample must be positive")
    size = round(sample * n) if sample < 1 else min(int(sample), n)
    size = max(size, 1) if n else 0
    return np.sort(np.random.default_rng(seed).permutation(n)[:size])


# -- predictions ------------------------------------------------------------


@dataclass(frozen=True)
class PredictionList:
    video_id: str
    pairs: tuple[tuple[int, float], ...]

    def __post_init__(self):
        pairs = tuple((int(l), float(c)) for l, c in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        labels = [l for l, _ in pairs]
        if len(set(labels)) != len(labels):
            raise DataError(f"{self.video_id}: duplicate labels in prediction list")
        prev = np.inf
        for l, c in pairs:
            if not 0.0 <= c <= 1.0:
                raise DataError(f"{self.video_id}: confidence {c} outside [0, 1]")
            if c > prev:
                raise DataError(f"{self.video_id}: confidences not sorted in descending order")
            prev = c

    @property
    def labels(self) -> list[int]:
        return [l for l, _ in self.pairs]


def save_predictions(preds: Iterable[PredictionList], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(PREDICTIONS_HEADER) + "\n")
        for p in preds:
            body = " ".join(f"{l} {c:.6f}" for l, c in p.pairs)
            f.write(f"{p.video_id},{body}\n")


def load_predictions(path, vocab: LabelVocabulary | int | None = None) -> list[PredictionList]:
    """Read a predictions CSV; label indices are bounds-checked against ``vocab``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"predictions file not found: {path}")
    num_labels = len(vocab) if isinstance(vocab, LabelVocabulary) else vocab
    out = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PREDICTIONS_HEADER:
            raise DataError(f"{path}: expected header {','.join(PREDICTIONS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            fields = row[1].split()
            if len(fields) % 2:
                raise DataError(f"{path}:{lineno}: odd number of label/confidence fields")
            try:
                pairs = [(int(fields[i]), float(fields[i + 1])) for i in range(0, len(fields), 2)]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric label or confidence") from None
            for l, _ in pairs:
                if l < 0 or (num_labels is not None and l >= num_labels):
                    raise DataError(f"{path}:{lineno}: unknown label {l}")
            try:
                out.append(PredictionList(row[0], tuple(pairs)))
            except DataError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
    return out


def predictions_to_matrix(preds: Sequence[PredictionList], num_labels: int) -> np.ndarray:
    """Dense ``n x |L|`` score matrix; labels absent from a list score 0."""
    scores = np.zeros((len(preds), num_labels))
    for i, p in enumerate(preds):
        for l, c in p.pairs:
            scores[i, l] = c
    return scores


def top_k(scores: np.ndarray, ids: Sequence[str], k: int) -> list[PredictionList]:
    """Top-k labels per row, descending, ties broken toward the smaller label index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != len(ids):
        raise ValueError("scores must be n x |L| and aligned with ids")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > scores.shape[1]:
        raise ValueError(f"k={k} exceeds the number of labels {scores.shape[1]}")
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return [
        PredictionList(vid, tuple((int(l), float(np.clip(scores[i, l], 0.0, 1.0))) for l in order[i]))
        for i, vid in enumerate(ids)
    ]
