"""``mmvc``: prep, train, predict, ensemble and score from the command line.

Every option can also come from a flat ``key = value`` file passed with
``--config``; explicit command-line flags win.  Unknown keys are errors.
All randomness derives from ``--seed`` plus a fixed per-step tag.

Exit codes: 0 success, 2 usage or configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    Dataset,
    LabelVocabulary,
    VideoRecord,
    load_feature_bank,
    load_manifest,
    load_predictions,
    load_truth,
    predictions_to_matrix,
    sample_indices,
    save_feature_bank,
    save_predictions,
    split_dataset,
    top_k,
    write_manifest,
)
from .ensemble import ScoreMatrix, average_pool, forest_predict, forest_train, max_pool
from .histogram import CentroidSet, HistogramDecoder, decoder_predict, decoder_train, histogram_matrix, kmeans_fit
from .metrics import evaluate_all, label_frequency_order
from .moe import MODALITIES, Moe, canonical_modalities, concat_matrix, moe_train
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .text import (
    EmbeddingTable,
    filter_label_leakage,
    label_overlap_ratio,
    load_embeddings,
    normalize_keywords,
    normalize_title,
)
from .textcnn import TextCnn, TextCnnConfig, embed_titles, textcnn_train
from .unigram import DEFAULT_ALPHA, UnigramCounts, unigram_fit, unigram_score_matrix

log = logging.getLogger("mmvc")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
MODELS = ("unigram", "histogram", "textcnn", "moe")


class ConfigError(Exception):
    """Bad usage: unknown keys, missing required options, invalid combinations."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def derive_seed(seed: int, tag: str) -> int:
    return (int(seed) + zlib.crc32(tag.encode("utf-8"))) % (2**31)


# -- small I/O helpers ----------------------------------------------------------


def _parent(path) -> Path:
    """Create the parent directory of an output file and return the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    _parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e.msg})") from None


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]):
    """Install config-file values as parser defaults so CLI flags still override."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or isinstance(action, argparse._SubParsersAction):
            raise ConfigError(f"unknown config key {key!r} for '{parser.prog}'")
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                value = _parse_bool(raw)
            elif action.nargs in ("+", "*"):
                value = [action.type(v) if action.type else v for v in raw.replace(",", " ").split()]
            else:
                value = action.type(raw) if action.type else raw
        except (TypeError, ValueError, argparse.ArgumentTypeError) as e:
            raise ConfigError(f"config key {key!r}: {e}") from None
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"config key {key!r}: {value!r} not one of {sorted(action.choices)}")
        defaults[key] = value
    parser.set_defaults(**defaults)


# -- prepared datasets ----------------------------------------------------------


@dataclass
class Prepared:
    dataset: Dataset
    table: EmbeddingTable
    root: Path


def load_prepared(manifest) -> Prepared:
    """Load a manifest written by ``mmvc prep`` with the files next to it."""
    manifest = Path(manifest)
    root = manifest.parent
    vocab = LabelVocabulary.load(root / "labels.txt")
    bank = load_feature_bank(root / "features.bin")
    dims = (bank[0].shape[1], bank[1].shape[1])
    ds = load_manifest(manifest, vocab, dims, bank)
    table = load_embeddings(root / "embeddings.txt")
    return Prepared(ds, table, root)


def _has_text(tokens, table: EmbeddingTable) -> bool:
    return any(t in table for t in tokens)


# -- prep -----------------------------------------------------------------------


def cmd_prep(args) -> int:
    if not (args.manifest and args.labels and args.embeddings and args.out):
        raise ConfigError("prep needs --manifest, --labels, --embeddings and --out")
    vocab = LabelVocabulary.load(args.labels)
    table = load_embeddings(args.embeddings)
    bank = load_feature_bank(args.bank) if args.bank else None
    if bank is not None:
        dims = (bank[0].shape[1], bank[1].shape[1])
    else:
        dims = (args.visual_dim, args.audio_dim)
    ds = load_manifest(args.manifest, vocab, dims, bank)
    if len(ds) == 0:
        raise DataError(f"{args.manifest}: no records")
    if args.split is not None and args.seed is None:
        raise ConfigError("--split needs --seed")

    normalized = []
    for r in ds.records:
        title = normalize_title(" ".join(r.title_tokens))
        keywords = normalize_keywords(r.keyword_tokens)
        normalized.append(VideoRecord(r.id, r.labels, r.visual, r.audio, tuple(title), tuple(keywords)))
    norm_ds = ds.replace_records(normalized)
    overlap_before = {s: label_overlap_ratio(norm_ds, s) for s in ("keywords", "titles")}

    removed = 0
    if args.leak_filter:
        filtered = []
        for r in normalized:
            title = filter_label_leakage(r.title_tokens, r.labels, vocab)
            keywords = filter_label_leakage(r.keyword_tokens, r.labels, vocab)
            removed += len(r.title_tokens) - len(title) + len(r.keyword_tokens) - len(keywords)
            filtered.append(VideoRecord(r.id, r.labels, r.visual, r.audio, tuple(title), tuple(keywords)))
        norm_ds = norm_ds.replace_records(filtered)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    counts = dict.fromkeys(
        ("empty_title", "empty_keywords", "oov_only_title", "oov_only_keywords",
         "usable_title", "usable_keywords", "usable_both", "no_usable_text"), 0)
    for r in norm_ds.records:
        t_in = sum(t in table for t in r.title_tokens)
        k_in = sum(t in table for t in r.keyword_tokens)
        counts["empty_title"] += not r.title_tokens
        counts["empty_keywords"] += not r.keyword_tokens
        counts["oov_only_title"] += bool(r.title_tokens) and t_in == 0
        counts["oov_only_keywords"] += bool(r.keyword_tokens) and k_in == 0
        counts["usable_title"] += t_in > 0
        counts["usable_keywords"] += k_in > 0
        counts["usable_both"] += t_in > 0 and k_in > 0
        counts["no_usable_text"] += t_in == 0 and k_in == 0
        rows.append((r.id, " ".join(map(str, sorted(r.labels))), len(r.title_tokens), t_in,
                     len(r.keyword_tokens), k_in))

    vocab.save(out / "labels.txt")
    save_feature_bank(out / "features.bin", norm_ds.visual_matrix(), norm_ds.audio_matrix())
    used = (t for r in norm_ds.records for t in r.title_tokens + r.keyword_tokens)
    table.restrict(used).save(out / "embeddings.txt")
    write_manifest(out / "manifest.jsonl", norm_ds, bank_rows=range(len(norm_ds)))
    with open(out / "records.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("id", "labels", "title_tokens", "title_in_vocab", "keyword_tokens", "keyword_in_vocab"))
        w.writerows(rows)

    report = {
        "records": len(norm_ds),
        "counts": counts,
        "leak_filter": bool(args.leak_filter),
        "leak_tokens_removed": removed,
        "label_overlap": overlap_before,
    }
    if args.split is not None:
        row_of = {r.id: i for i, r in enumerate(norm_ds.records)}
        train, dev = split_dataset(norm_ds, (args.split, 1.0 - args.split), derive_seed(args.seed, "prep/split"))
        for name, part in (("train", train), ("dev", dev)):
            write_manifest(out / f"{name}.jsonl", part, bank_rows=[row_of[r.id] for r in part.records])
        report["split"] = {"train": len(train), "dev": len(dev)}
    _write_json(out / "prep_report.json", report)

    print(f"records            {len(norm_ds)}")
    for key, value in counts.items():
        print(f"{key:<18} {value}")
    print(f"label overlap      keywords {overlap_before['keywords']:.4f}  titles {overlap_before['titles']:.4f}")
    if args.leak_filter:
        print(f"leak filter        removed {removed} tokens")
    return EXIT_OK


# -- feature builders shared by train and predict --------------------------------


def _keyword_features(prep: Prepared, run: Path) -> np.ndarray:
    cents = CentroidSet.load(run / "centroids.mmkm")
    if cents.dim != prep.table.dim:
        raise DataError(f"modality 'keyword': embeddings have dim {prep.table.dim}, "
                        f"histogram model expects {cents.dim}")
    return histogram_matrix([r.tokens("keywords") for r in prep.dataset.records], prep.table, cents)


def _textcnn_config(run: Path) -> TextCnnConfig:
    cfg = _read_json(run / "config.json")
    if cfg.get("model") != "textcnn":
        raise DataError(f"{run}: not a textcnn run")
    return TextCnnConfig(**cfg["architecture"])


def _title_batches(prep: Prepared, config: TextCnnConfig, chunk=512):
    titles = [r.tokens("titles") for r in prep.dataset.records]
    for i in range(0, len(titles), chunk):
        yield i, embed_titles(titles[i:i + chunk], prep.table, config)


def _load_textcnn(run: Path, prep: Prepared) -> tuple[TextCnn, TextCnnConfig]:
    config = _textcnn_config(run)
    if config.embed_dim != prep.table.dim:
        raise DataError(f"modality 'title': embeddings have dim {prep.table.dim}, "
                        f"TextCNN expects {config.embed_dim}")
    if config.num_labels != prep.dataset.num_labels:
        raise DataError(f"TextCNN has {config.num_labels} labels, data has {prep.dataset.num_labels}")
    return TextCnn.from_state(config, load_checkpoint(run / "model.mmnn")), config


def _title_features(prep: Prepared, run: Path) -> np.ndarray:
    model, config = _load_textcnn(run, prep)
    feats = np.zeros((len(prep.dataset), config.hidden))
    for start, batch in _title_batches(prep, config):
        feats[start:start + len(batch)] = model.extract_features(batch)
    # titles with no in-vocabulary token get the zero vector, like any absent modality
    for i, r in enumerate(prep.dataset.records):
        if not _has_text(r.tokens("titles"), prep.table):
            feats[i] = 0.0
    return feats


def _moe_blocks(prep: Prepared, mods, run: Path) -> dict[str, np.ndarray]:
    ds = prep.dataset
    blocks = {}
    if "visual" in mods:
        blocks["visual"] = ds.visual_matrix()
    if "audio" in mods:
        blocks["audio"] = ds.audio_matrix()
    if "keyword" in mods:
        blocks["keyword"] = _keyword_features(prep, run / "histogram")
    if "title" in mods:
        blocks["title"] = _title_features(prep, run / "textcnn")
    return blocks


def _text_mask(prep: Prepared, mods) -> np.ndarray:
    keep = np.ones(len(prep.dataset), dtype=bool)
    for i, r in enumerate(prep.dataset.records):
        if "keyword" in mods and not _has_text(r.tokens("keywords"), prep.table):
            keep[i] = False
        if "title" in mods and not _has_text(r.tokens("titles"), prep.table):
            keep[i] = False
    return keep


# -- train ----------------------------------------------------------------------


def _train_subset(prep: Prepared, args) -> Prepared:
    if args.sample is None:
        return prep
    idx = sample_indices(len(prep.dataset), args.sample, derive_seed(args.seed, "train/sample"))
    return Prepared(prep.dataset.subset(idx.tolist()), prep.table, prep.root)


def _train_unigram(prep, args, out):
    model = unigram_fit(prep.dataset, args.source, args.alpha)
    model.save(out / "model.jsonl")
    return {"source": args.source, "alpha": args.alpha}, {"tokens": model.total}


def _train_histogram(prep, args, out):
    seen, vectors = set(), []
    for r in prep.dataset.records:
        for t in r.tokens(args.source):
            if t in prep.table and t not in seen:
                seen.add(t)
                vectors.append(prep.table.table[t])
    if len(vectors) < args.clusters:
        raise DataError(f"{len(vectors)} distinct in-vocabulary {args.source} tokens, "
                        f"fewer than --clusters {args.clusters}")
    cents = kmeans_fit(np.stack(vectors), args.clusters, derive_seed(args.seed, "train/kmeans"),
                       max_iters=args.kmeans_iters)
    cents.save(out / "centroids.mmkm")
    feats = histogram_matrix([r.tokens(args.source) for r in prep.dataset.records], prep.table, cents)
    model = decoder_train(feats, prep.dataset.label_matrix(), hidden=args.hidden, lr=args.lr,
                          batch_size=args.batch_size, epochs=args.epochs, weight_decay=args.weight_decay,
                          seed=derive_seed(args.seed, "train/decoder"))
    model.save(out / "decoder.mmnn")
    params = {"source": args.source, "clusters": args.clusters, "hidden": args.hidden, "lr": args.lr,
              "batch_size": args.batch_size, "epochs": args.epochs, "weight_decay": args.weight_decay,
              "kmeans_iters": args.kmeans_iters}
    return params, {"kmeans_words": len(vectors), "kmeans_inertia": cents.history,
                    "epoch_loss": model.loss_history}


def _train_textcnn(prep, args, out):
    config = TextCnnConfig(embed_dim=prep.table.dim, num_labels=prep.dataset.num_labels,
                           max_width=args.max_width, channels=args.channels, hidden=args.hidden,
                           dropout=args.dropout, max_len=args.max_len)
    batch = embed_titles([r.tokens("titles") for r in prep.dataset.records], prep.table, config)
    model = textcnn_train(batch, prep.dataset.label_matrix(), config, epochs=args.epochs,
                          batch_size=args.batch_size, lr=args.lr, weight_decay=args.weight_decay,
                          seed=derive_seed(args.seed, "train/textcnn"))
    save_checkpoint(out / "model.mmnn", model.state())
    params = {"lr": args.lr, "batch_size": args.batch_size, "epochs": args.epochs,
              "weight_decay": args.weight_decay}
    return params, {"epoch_loss": model.loss_history, "architecture": config.to_dict()}


def _train_moe(prep, args, out):
    mods = canonical_modalities([m.strip() for m in args.modalities.split(",") if m.strip()])
    if not mods:
        raise ConfigError("--modalities must name at least one of " + ", ".join(MODALITIES))
    for mod, flag, sub in (("keyword", args.histogram, "histogram"), ("title", args.textcnn, "textcnn")):
        if mod in mods:
            if not flag:
                raise ConfigError(f"modality {mod!r} needs --{sub} <run dir>")
            src = Path(flag)
            if not (src / "config.json").exists():
                raise DataError(f"{src}: not a training run directory")
            if _read_json(src / "config.json").get("model") != sub:
                raise DataError(f"{src}: expected a {sub} run")
            dst = out / sub
            if dst.exists():
                shutil.rmtree(dst)
            shutil.copytree(src, dst)
    blocks = _moe_blocks(prep, mods, out)
    labels = prep.dataset.label_matrix()
    dropped = 0
    if args.require_text:
        keep = _text_mask(prep, mods)
        dropped = int((~keep).sum())
        blocks = {k: v[keep] for k, v in blocks.items()}
        labels = labels[keep]
        if not keep.any():
            raise DataError("no training record has text for every enabled text modality")
    x = concat_matrix(blocks, mods)
    dims = {m: blocks[m].shape[1] for m in mods}
    model = moe_train(x, labels, args.experts, lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      weight_decay=args.weight_decay, seed=derive_seed(args.seed, "train/moe"),
                      modalities=mods, modality_dims=dims)
    model.save(out / "model.mmnn")
    params = {"experts": args.experts, "modalities": list(mods), "lr": args.lr, "batch_size": args.batch_size,
              "epochs": args.epochs, "weight_decay": args.weight_decay, "require_text": bool(args.require_text)}
    return params, {"epoch_loss": model.loss_history, "dropped_without_text": dropped,
                    "modality_dims": dims}


TRAINERS = {"unigram": _train_unigram, "histogram": _train_histogram,
            "textcnn": _train_textcnn, "moe": _train_moe}


def cmd_train(args) -> int:
    if args.seed is None:
        raise ConfigError("train needs --seed")
    if args.data is None or args.out is None:
        raise ConfigError("train needs --data and --out")
    prep = _train_subset(load_prepared(args.data), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, logged = TRAINERS[args.model](prep, args, out)
    config = {"model": args.model, "seed": args.seed, "sample": args.sample, "params": params,
              "num_labels": prep.dataset.num_labels, "trained_on": len(prep.dataset), "version": __version__}
    if "architecture" in logged:
        config["architecture"] = logged.pop("architecture")
    _write_json(out / "config.json", config)
    _write_json(out / "train_log.json", logged)
    loss = logged.get("epoch_loss")
    tail = f", final loss {loss[-1]:.6f}" if loss else ""
    print(f"trained {args.model} on {len(prep.dataset)} videos{tail}")
    return EXIT_OK


# -- predict --------------------------------------------------------------------


def predict_scores(run, prep: Prepared) -> tuple[list[str], np.ndarray]:
    """Score matrix of a trained run on a prepared dataset."""
    run = Path(run)
    cfg = _read_json(run / "config.json")
    kind = cfg.get("model")
    ds = prep.dataset
    if cfg.get("num_labels") != ds.num_labels:
        raise DataError(f"model has {cfg.get('num_labels')} labels, data has {ds.num_labels}")
    ids = ds.ids
    if kind == "unigram":
        model = UnigramCounts.load(run / "model.jsonl")
        return ids, unigram_score_matrix(model, [r.tokens(cfg["params"]["source"]) for r in ds.records])
    if kind == "histogram":
        cents = CentroidSet.load(run / "centroids.mmkm")
        if cents.dim != prep.table.dim:
            raise DataError(f"modality 'keyword': embeddings have dim {prep.table.dim}, "
                            f"histogram model expects {cents.dim}")
        feats = histogram_matrix([r.tokens(cfg["params"]["source"]) for r in ds.records], prep.table, cents)
        return ids, decoder_predict(HistogramDecoder.load(run / "decoder.mmnn"), feats)
    if kind == "textcnn":
        model, config = _load_textcnn(run, prep)
        scores = np.zeros((len(ds), config.num_labels))
        for start, batch in _title_batches(prep, config):
            scores[start:start + len(batch)] = model.forward(batch)
        return ids, scores
    if kind == "moe":
        model = Moe.load(run / "model.mmnn")
        blocks = _moe_blocks(prep, model.modalities, run)
        for m in model.modalities:
            if blocks[m].shape[1] != model.modality_dims[m]:
                raise DataError(f"modality {m!r} has dim {blocks[m].shape[1]}, "
                                f"model expects {model.modality_dims[m]}")
        if cfg["params"].get("require_text"):
            keep = _text_mask(prep, model.modalities)
            blocks = {k: v[keep] for k, v in blocks.items()}
            ids = [i for i, k in zip(ids, keep) if k]
        return ids, model.predict(concat_matrix(blocks, model.modalities))
    raise DataError(f"{run}: unknown model type {kind!r}")


def _check_k(k, num_labels):
    """Resolve ``--top-k``: unset means 20, or every label when there are fewer."""
    if k is None:
        return min(20, num_labels)
    if k < 1:
        raise ConfigError("--top-k must be at least 1")
    if k > num_labels:
        raise ConfigError(f"--top-k {k} exceeds the number of labels {num_labels}")
    return k


def cmd_predict(args) -> int:
    if not (args.model and args.data and args.out):
        raise ConfigError("predict needs --model, --data and --out")
    prep = load_prepared(args.data)
    k = _check_k(args.top_k, prep.dataset.num_labels)
    ids, scores = predict_scores(args.model, prep)
    save_predictions(top_k(scores, ids, k), _parent(args.out))
    print(f"wrote {len(ids)} prediction rows (k={k}) to {args.out}")
    return EXIT_OK


# -- ensemble -------------------------------------------------------------------


def _load_score_files(paths, num_labels) -> list[ScoreMatrix]:
    mats = []
    for p in paths:
        preds = load_predictions(p, num_labels)
        mats.append(ScoreMatrix([q.video_id for q in preds], predictions_to_matrix(preds, num_labels)))
    first = mats[0]
    order = {vid: i for i, vid in enumerate(first.ids)}
    aligned = [first]
    for p, m in zip(paths[1:], mats[1:]):
        if set(m.ids) != set(first.ids) or len(m.ids) != len(first.ids):
            raise DataError(f"{p}: video ids do not match {paths[0]}")
        perm = np.argsort([order[v] for v in m.ids])
        aligned.append(ScoreMatrix(first.ids, m.scores[perm]))
    return aligned


def cmd_ensemble(args) -> int:
    if not (args.inputs and args.labels and args.out):
        raise ConfigError("ensemble needs --inputs, --labels and --out")
    vocab = LabelVocabulary.load(args.labels)
    L = len(vocab)
    k = _check_k(args.top_k, L)
    mats = _load_score_files(args.inputs, L)
    if args.strategy == "avg":
        result = average_pool(mats)
    elif args.strategy == "max":
        result = max_pool(mats)
    else:
        if not args.truth or not args.fit_inputs:
            raise ConfigError("the forest strategy is fit on held-out scores: pass --truth and --fit-inputs")
        if args.seed is None:
            raise ConfigError("the forest strategy needs --seed")
        if len(args.fit_inputs) != len(args.inputs):
            raise ConfigError("--fit-inputs must list one file per --inputs file, in the same order")
        if len(args.inputs) < 2:
            raise ConfigError("the forest strategy needs at least two models")
        fit = _load_score_files(args.fit_inputs, L)
        truth = load_truth(args.truth)
        missing = [v for v in fit[0].ids if v not in truth]
        if missing:
            raise DataError(f"fit video {missing[0]!r} has no ground truth in {args.truth}")
        forest = forest_train(fit, [truth[v] for v in fit[0].ids], num_trees=args.num_trees,
                              max_depth=args.max_depth, seed=derive_seed(args.seed, "ensemble/forest"))
        if args.forest_out:
            forest.save(_parent(args.forest_out))
        result = forest_predict(forest, mats)
    save_predictions(top_k(result.scores, result.ids, k), _parent(args.out))
    print(f"{args.strategy} ensemble of {len(mats)} inputs -> {args.out}")
    return EXIT_OK


# -- score ----------------------------------------------------------------------


def cmd_score(args) -> int:
    if not (args.predictions and args.truth):
        raise ConfigError("score needs --predictions and --truth")
    if args.sample is not None and args.seed is None:
        raise ConfigError("--sample needs --seed")
    truth = load_truth(args.truth)
    labels_path = Path(args.labels) if args.labels else Path(args.truth).parent / "labels.txt"
    vocab = LabelVocabulary.load(labels_path) if labels_path.exists() else None
    if vocab is None:
        raise DataError(f"no label vocabulary at {labels_path}; pass --labels")
    L = len(vocab)
    preds = load_predictions(args.predictions, L)
    by_id = {p.video_id: p for p in preds}
    if len(by_id) != len(preds):
        raise DataError(f"{args.predictions}: duplicate video ids")
    missing = [v for v in truth if v not in by_id]
    extra = [v for v in by_id if v not in truth]
    if missing or extra:
        what = f"no prediction for {missing[0]!r}" if missing else f"unknown video {extra[0]!r}"
        raise DataError(f"predictions and truth ids differ ({len(missing)} missing, {len(extra)} extra): {what}")
    ids = list(truth)
    for labels in truth.values():
        for l in labels:
            if not 0 <= l < L:
                raise DataError(f"truth label {l} outside the vocabulary of {L}")
    if args.sample is not None:
        ids = [ids[i] for i in sample_indices(len(ids), args.sample, derive_seed(args.seed, "score/sample"))]
    ordered = [by_id[v] for v in ids]
    truth_rows = [truth[v] for v in ids]
    report = evaluate_all(ordered, predictions_to_matrix(ordered, L), truth_rows, k=args.top_k,
                          with_per_label=args.per_label is not None)
    out = report.to_json()
    out["k"] = args.top_k
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out:
        _write_json(args.out, out)
    if args.per_label is not None:
        _write_per_label(args, report, truth_rows, vocab)
    return EXIT_OK


def _write_per_label(args, report, truth_rows, vocab):
    counts = np.zeros(len(vocab), dtype=np.int64)
    for t in truth_rows:
        for l in t:
            counts[l] += 1
    rows = []
    for rank, l in enumerate(label_frequency_order(truth_rows, len(vocab)), start=1):
        if l not in report.per_label_gap:
            continue
        rows.append({"rank": rank, "label": l, "name": vocab.names[l], "positives": int(counts[l]),
                     "gap": report.per_label_gap[l]})
    with open(_parent(args.per_label), "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("rank", "label", "name", "positives", "gap"))
        for r in rows:
            w.writerow((r["rank"], r["label"], r["name"], r["positives"], f"{r['gap']:.6f}"))
    if not args.no_figure:
        from .plotting import plot_per_label_gap

        fig = Path(args.figure) if args.figure else Path(args.per_label).with_suffix(".png")
        plot_per_label_gap(rows, _parent(fig))


# -- synth ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synthetic import text_corpus, write_corpus

    if args.seed is None:
        raise ConfigError("synth needs --seed")
    corpus = text_corpus(args.train, args.val, args.seed, num_labels=args.labels,
                         embed_dim=args.embed_dim, leak_rate=args.leak_rate)
    paths = write_corpus(args.out, corpus)
    print(f"wrote {args.train} train and {args.val} val videos to {args.out}")
    for name, p in paths.items():
        log.info("%s: %s", name, p)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' file with option defaults")

    parser = _Parser(prog="mmvc", description="Multi-modal video classification toolkit.")
    parser.add_argument("--version", action="version", version=f"mmvc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    leaves = {}

    p = sub.add_parser("prep", parents=[common], help="normalize text, write a prepared dataset")
    p.add_argument("--manifest")
    p.add_argument("--labels")
    p.add_argument("--embeddings")
    p.add_argument("--bank", help="MMF1 feature bank referenced by bank_row fields")
    p.add_argument("--visual-dim", type=int, default=1024)
    p.add_argument("--audio-dim", type=int, default=128)
    p.add_argument("--out")
    p.add_argument("--leak-filter", action="store_true", help="drop tokens equal to a word of the video's labels")
    p.add_argument("--split", type=float, help="train fraction; the rest becomes dev.jsonl")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prep)
    leaves["prep"] = p

    p = sub.add_parser("train", help="train one model on a prepared manifest")
    models = p.add_subparsers(dest="model", metavar="MODEL", parser_class=_Parser)
    train_common = _Parser(add_help=False)
    train_common.add_argument("--data", help="prepared manifest")
    train_common.add_argument("--out", help="run directory")
    train_common.add_argument("--seed", type=int)
    train_common.add_argument("--sample", type=float, help="fraction (<1) or count of training videos")

    def train_parser(name, help_text, **defaults):
        q = models.add_parser(name, parents=[common, train_common], help=help_text)
        q.set_defaults(func=cmd_train, **defaults)
        leaves[f"train {name}"] = q
        return q

    q = train_parser("unigram", "naive Bayes over keyword or title tokens")
    q.add_argument("--source", choices=("keywords", "titles"), default="keywords")
    q.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)

    q = train_parser("histogram", "bag-of-centroids histogram + two-layer decoder")
    q.add_argument("--source", choices=("keywords", "titles"), default="keywords")
    q.add_argument("--clusters", type=int, default=1024)
    q.add_argument("--kmeans-iters", type=int, default=100)
    q.add_argument("--hidden", type=int, default=512)
    q.add_argument("--epochs", type=int, default=10)
    q.add_argument("--batch-size", type=int, default=64)
    q.add_argument("--lr", type=float, default=1e-3)
    q.add_argument("--weight-decay", type=float, default=0.0)

    q = train_parser("textcnn", "multi-width convolutional title classifier")
    q.add_argument("--max-width", type=int, default=8)
    q.add_argument("--channels", type=int, default=512)
    q.add_argument("--hidden", type=int, default=4096)
    q.add_argument("--dropout", type=float, default=0.5)
    q.add_argument("--max-len", type=int, default=30)
    q.add_argument("--epochs", type=int, default=5)
    q.add_argument("--batch-size", type=int, default=512)
    q.add_argument("--lr", type=float, default=1e-3)
    q.add_argument("--weight-decay", type=float, default=1e-7)

    q = train_parser("moe", "mixture of experts over concatenated modality features")
    q.add_argument("--modalities", default="visual,audio", help="comma list of visual,audio,keyword,title")
    q.add_argument("--experts", type=int, default=8)
    q.add_argument("--histogram", help="histogram run directory (keyword modality)")
    q.add_argument("--textcnn", help="textcnn run directory (title modality)")
    q.add_argument("--require-text", action="store_true", help="drop videos lacking an enabled text modality")
    q.add_argument("--epochs", type=int, default=20)
    q.add_argument("--batch-size", type=int, default=256)
    q.add_argument("--lr", type=float, default=1e-3)
    q.add_argument("--weight-decay", type=float, default=0.0)

    p = sub.add_parser("predict", parents=[common], help="write top-k predictions of a trained run")
    p.add_argument("--model", help="run directory")
    p.add_argument("--data", help="prepared manifest")
    p.add_argument("--out")
    p.add_argument("--top-k", type=int, help="labels per video (default 20, capped at the label count)")
    p.set_defaults(func=cmd_predict)
    leaves["predict"] = p

    p = sub.add_parser("ensemble", parents=[common], help="combine prediction files")
    p.add_argument("--inputs", nargs="+")
    p.add_argument("--strategy", choices=("avg", "max", "forest"), default="avg")
    p.add_argument("--labels")
    p.add_argument("--out")
    p.add_argument("--top-k", type=int, help="labels per video (default 20, capped at the label count)")
    p.add_argument("--truth", help="manifest with labels for the forest fit split")
    p.add_argument("--fit-inputs", nargs="+", help="held-out prediction files, one per --inputs file")
    p.add_argument("--num-trees", type=int, default=1000)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--forest-out", help="where to save the fitted forest (JSONL)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ensemble)
    leaves["ensemble"] = p

    p = sub.add_parser("score", parents=[common], help="evaluate predictions against a manifest")
    p.add_argument("--predictions")
    p.add_argument("--truth", help="manifest holding the ground-truth labels")
    p.add_argument("--labels", help="label vocabulary (default: labels.txt next to --truth)")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--per-label", help="CSV of per-label GAP sorted by label frequency")
    p.add_argument("--figure", help="PNG path for the per-label chart (default: next to the CSV)")
    p.add_argument("--no-figure", action="store_true")
    p.add_argument("--sample", type=float, help="score a seeded subsample: fraction (<1) or count")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_score)
    leaves["score"] = p

    p = sub.add_parser("synth", parents=[common], help="write a small synthetic corpus")
    p.add_argument("--out")
    p.add_argument("--train", type=int, default=600)
    p.add_argument("--val", type=int, default=200)
    p.add_argument("--labels", type=int, default=8)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--leak-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    leaves["synth"] = p
    return parser, leaves


def parse_args(argv):
    parser, leaves = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise ConfigError("missing command; choose from prep, train, predict, ensemble, score, synth")
    if args.command == "train" and getattr(args, "model", None) is None:
        raise ConfigError("missing model; choose from " + ", ".join(MODELS))
    if getattr(args, "config", None):
        key = f"train {args.model}" if args.command == "train" else args.command
        _apply_config(leaves[key], read_config_file(args.config))
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except ConfigError as e:
        print(f"mmvc: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as e:
        print(f"mmvc: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
