"""Synthetic corpora with known structure, for demos and trend checks.

Nothing here is needed to train or score real data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, LabelVocabulary, VideoRecord, save_feature_bank, write_manifest
from .text import EmbeddingTable

LABEL_NAMES = (
    "Alpha", "Bravo", "Charlie", "Delta", "Echo", "Foxtrot", "Golf", "Hotel",
    "India", "Juliett", "Kilo", "Lima", "Mike", "November", "Oscar", "Papa",
)
FILLER = ("video", "my", "new", "best", "official", "HD", "part", "live", "of", "the")


def _letters(j: int) -> str:
    # digits would be stripped by keyword normalization, so spell indices in letters
    out = ""
    while True:
        j, r = divmod(j, 26)
        out = chr(ord("a") + r) + out
        if j == 0:
            return out
        j -= 1


def fusion_blocks(n, seed, visual_groups=3, text_groups=3, dim=8, noise=1.0, nuisance=0, coarse=False):
    """Feature blocks whose fine label needs both the visual and the text block.

    The fine label of a video is ``a * text_groups + b``: ``a`` is readable
    (with noise) only from the visual block and ``b`` only from the text
    block.  ``nuisance`` appends pure-noise columns to both blocks.  With
    ``coarse`` every video also carries the coarse labels "visual group a"
    and "text group b", appended after the fine labels.  An audio block of
    pure noise is included.  Returns ``(blocks, labels)``.
    """
    rng = np.random.default_rng(seed)
    vproto = rng.standard_normal((visual_groups, dim)) * 1.5
    tproto = rng.standard_normal((text_groups, dim)) * 1.5
    a = rng.integers(visual_groups, size=n)
    b = rng.integers(text_groups, size=n)
    fine = visual_groups * text_groups
    labels = np.zeros((n, fine + (visual_groups + text_groups if coarse else 0)))
    labels[np.arange(n), a * text_groups + b] = 1.0
    if coarse:
        labels[np.arange(n), fine + a] = 1.0
        labels[np.arange(n), fine + visual_groups + b] = 1.0
    blocks = {
        "visual": np.hstack([vproto[a] + noise * rng.standard_normal((n, dim)), rng.standard_normal((n, nuisance))]),
        "audio": rng.standard_normal((n, dim // 2)),
        "text": np.hstack([tproto[b] + noise * rng.standard_normal((n, dim)), rng.standard_normal((n, nuisance))]),
    }
    return blocks, labels


def marker_titles(n, seed, vocab_size=50, dim=8, num_markers=4, length=(4, 9)):
    """Titles over a small vocabulary where label c is present iff marker word c is.

    Every title holds one or two distinct marker words at random positions.
    Word vectors are unit length, so each word is an extreme point of the
    vocabulary and one linear filter can single it out.
    Returns ``(table, token_lists, labels)``.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab_size)]
    vecs = rng.standard_normal((vocab_size, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    table = EmbeddingTable(dim, dict(zip(words, vecs)))
    markers = words[:num_markers]
    fillers = words[num_markers:]
    token_lists, labels = [], np.zeros((n, num_markers))
    for i in range(n):
        size = int(rng.integers(length[0], length[1] + 1))
        toks = [fillers[j] for j in rng.integers(len(fillers), size=size)]
        chosen = rng.choice(num_markers, size=int(rng.integers(1, 3)), replace=False)
        for m in chosen:
            toks.insert(int(rng.integers(len(toks) + 1)), markers[m])
            labels[i, m] = 1.0
        token_lists.append(toks)
    return table, token_lists, labels


@dataclass
class Corpus:
    train: Dataset
    val: Dataset
    table: EmbeddingTable
    raw_titles: dict[str, str]
    raw_keywords: dict[str, list[str]]


def text_corpus(n_train, n_val, seed, num_labels=8, embed_dim=16, words_per_topic=800,
                topic_words=(1, 3), noise_words=3, topic_spread=0.9, leak_rate=0.5,
                visual_dim=32, audio_dim=8, second_label_rate=0.3) -> Corpus:
    """Videos whose keywords/titles carry label signal through word embeddings.

    Each label owns a pool of topic words embedded around a label-specific
    centre; a video draws a few topic words per label (so most test words are
    unseen in training), some noise words, and with probability ``leak_rate``
    the label name itself.  Visual and audio vectors are noisy label
    prototypes, audio being the weaker one.
    """
    if num_labels > len(LABEL_NAMES):
        raise ValueError(f"at most {len(LABEL_NAMES)} labels")
    rng = np.random.default_rng(seed)
    names = LABEL_NAMES[:num_labels]
    vocab = LabelVocabulary(names)
    centres = rng.standard_normal((num_labels, embed_dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    centres *= 2.0

    table = {}
    pools = []
    for l, name in enumerate(names):
        table[name.lower()] = centres[l] + 0.3 * rng.standard_normal(embed_dim)
        pool = [f"{name.lower()[:3]}q{_letters(j)}" for j in range(words_per_topic)]
        for w in pool:
            table[w] = centres[l] + topic_spread * rng.standard_normal(embed_dim)
        pools.append(pool)
    noise_vocab = [f"zz{_letters(j)}" for j in range(400)]
    for w in noise_vocab:
        table[w] = 1.2 * rng.standard_normal(embed_dim)
    for w in FILLER:
        table.setdefault(w, 1.2 * rng.standard_normal(embed_dim))
        table.setdefault(w.lower(), table[w])
    emb = EmbeddingTable(embed_dim, table)

    vproto = rng.standard_normal((num_labels, visual_dim))
    aproto = rng.standard_normal((num_labels, audio_dim))

    raw_titles, raw_keywords = {}, {}

    def make(n, prefix):
        records = []
        for i in range(n):
            vid = f"{prefix}{i:05d}"
            first = int(rng.integers(num_labels))
            labels = {first}
            if rng.random() < second_label_rate:
                labels.add(int(rng.integers(num_labels)))
            kws, title = [], []
            for l in sorted(labels):
                k = int(rng.integers(topic_words[0], topic_words[1] + 1))
                kws += [pools[l][j] for j in rng.integers(words_per_topic, size=k)]
                title += [pools[l][j] for j in rng.integers(words_per_topic, size=max(1, k - 1))]
                if rng.random() < leak_rate:
                    kws.append(names[l] + ("!" if rng.random() < 0.2 else ""))
                    title.insert(0, names[l])
            kws += [noise_vocab[j] for j in rng.integers(len(noise_vocab), size=noise_words)]
            kws = [kws[j] for j in rng.permutation(len(kws))]
            if rng.random() < 0.3:
                kws.append(str(int(rng.integers(100))))
            title = [FILLER[j] for j in rng.integers(len(FILLER), size=2)] + title
            if rng.random() < 0.1:
                title, kws = [], kws
            label_list = sorted(labels)
            visual = vproto[label_list].sum(axis=0) + 1.5 * rng.standard_normal(visual_dim)
            audio = aproto[label_list].sum(axis=0) + 3.0 * rng.standard_normal(audio_dim)
            raw_titles[vid] = " ".join(title) + (" #1" if rng.random() < 0.2 else "")
            raw_keywords[vid] = [k.upper() if rng.random() < 0.1 else k for k in kws]
            records.append(VideoRecord(vid, frozenset(labels), visual, audio,
                                       tuple(raw_titles[vid].split()), tuple(raw_keywords[vid])))
        return Dataset(tuple(records), vocab, (visual_dim, audio_dim))

    return Corpus(make(n_train, "tr"), make(n_val, "va"), emb, raw_titles, raw_keywords)


def write_corpus(out_dir, corpus: Corpus) -> dict[str, Path]:
    """Write labels, embeddings, one feature bank and train/val manifests."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "labels": out / "labels.txt",
        "embeddings": out / "embeddings.txt",
        "bank": out / "features.bin",
        "train": out / "train.jsonl",
        "val": out / "val.jsonl",
    }
    corpus.train.vocab.save(paths["labels"])
    corpus.table.save(paths["embeddings"])
    both = corpus.train.records + corpus.val.records
    save_feature_bank(paths["bank"], np.stack([r.visual for r in both]), np.stack([r.audio for r in both]))
    n_train = len(corpus.train)
    write_manifest(paths["train"], corpus.train, bank_rows=range(n_train))
    write_manifest(paths["val"], corpus.val, bank_rows=range(n_train, n_train + len(corpus.val)))
    return paths
