"""Keyword/title normalization, embedding lookup and label-leakage handling."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, DataError, LabelVocabulary

KEYWORD_STOPWORDS = frozenset({"and", "the"})


def _is_symbol_or_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


def _strip_chars(token: str, digits: bool) -> str:
    return "".join(
        ch
        for ch in token
        if not (_is_symbol_or_punct(ch) or (digits and unicodedata.category(ch) == "Nd"))
    )


def normalize_keywords(raw: Iterable[str]) -> list[str]:
    """Lowercase, drop punctuation/symbols/digits and the stop words "and"/"the"."""
    out = []
    for kw in raw:
        for piece in kw.split():
            tok = _strip_chars(piece.lower(), digits=True)
            if tok and tok not in KEYWORD_STOPWORDS:
                out.append(tok)
    return out


def normalize_title(raw: str) -> list[str]:
    """Whitespace-split and strip punctuation/symbols; case, digits and stop words are kept."""
    return [tok for tok in (_strip_chars(p, digits=False) for p in raw.split()) if tok]


@dataclass
class EmbeddingTable:
    dim: int
    table: dict[str, np.ndarray]

    def __len__(self):
        return len(self.table)

    def __contains__(self, token):
        return token in self.table

    def get(self, token: str) -> np.ndarray | None:
        """Vector for ``token`` or None; there is no default vector for OOV tokens."""
        return self.table.get(token)

    def matrix(self) -> np.ndarray:
        if not self.table:
            return np.zeros((0, self.dim))
        return np.stack(list(self.table.values()))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"{len(self.table)} {self.dim}\n")
            for tok, vec in self.table.items():
                f.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")

    def restrict(self, tokens: Iterable[str]) -> "EmbeddingTable":
        """Sub-table holding only ``tokens`` that are present, in first-seen order."""
        sub = {}
        for t in tokens:
            if t in self.table and t not in sub:
                sub[t] = self.table[t]
        return EmbeddingTable(self.dim, sub)


def load_embeddings(path) -> EmbeddingTable:
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: header must be '<vocab_size> <dim>'")
        try:
            size, dim = int(header[0]), int(header[1])
        except ValueError:
            raise DataError(f"{path}:1: non-integer header") from None
        table = {}
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            tok = parts[0]
            if tok in table:
                raise DataError(f"{path}:{lineno}: duplicate token {tok!r}")
            try:
                table[tok] = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric vector value") from None
    if len(table) != size:
        raise DataError(f"{path}: header declares {size} tokens, file has {len(table)}")
    return EmbeddingTable(dim, table)


def embed_tokens(tokens: Sequence[str], table: EmbeddingTable) -> tuple[np.ndarray, list[int]]:
    """Stack embeddings of in-vocabulary tokens, returning the matrix and kept positions."""
    kept = [i for i, t in enumerate(tokens) if t in table.table]
    if not kept:
        return np.zeros((0, table.dim)), kept
    return np.stack([table.table[tokens[i]] for i in kept]), kept


def label_words(labels: Iterable[int], vocab: LabelVocabulary) -> set[str]:
    """Case-folded words of the given labels' names, punctuation stripped."""
    words = set()
    for l in labels:
        for piece in vocab.names[l].split():
            w = _strip_chars(piece, digits=False).casefold()
            if w:
                words.add(w)
    return words


def filter_label_leakage(tokens: Sequence[str], labels: Iterable[int], vocab: LabelVocabulary) -> list[str]:
    words = label_words(labels, vocab)
    return [t for t in tokens if t.casefold() not in words]


def label_overlap_ratio(ds: Dataset, source: str) -> float:
    """Mean over videos of the fraction of tokens that are words of the video's labels.

    Videos without tokens contribute 0.
    """
    if len(ds) == 0:
        raise DataError("label overlap of an empty dataset is undefined")
    total = 0.0
    for r in ds.records:
        toks = r.tokens(source)
        if not toks:
            continue
        words = label_words(r.labels, ds.vocab)
        total += sum(t.casefold() in words for t in toks) / len(toks)
    return total / len(ds)
