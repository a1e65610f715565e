import csv
import json
from pathlib import Path

import numpy as np
import pytest

from mmvc.cli import derive_seed, main, read_config_file
from mmvc.data import load_predictions
from mmvc.unigram import unigram_fit, unigram_posterior


def run(*args):
    return main([str(a) for a in args])


def ok(*args):
    rc = run(*args)
    assert rc == 0, args
    return rc


def _write_toy(root: Path, visual_dim=2, rows=None):
    """Hand-sized raw inputs: labels, embeddings, and an inline-feature manifest."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "labels.txt").write_text("Cat\nDog\nIce Cream\n")
    (root / "emb.txt").write_text("4 2\ncat 1 0\ndog 0 1\nfun 0.5 0.5\nice 0.2 0.9\n")
    rows = rows or [
        {"id": "a", "labels": [0], "keywords": ["Cat"], "title": "Funny cat video"},
        {"id": "b", "labels": [1], "keywords": ["dog"], "title": "DOG!"},
        {"id": "c", "labels": [2, 0], "keywords": ["Ice Cream", "zebra"], "title": ""},
        {"id": "d", "labels": [1], "keywords": ["42"], "title": "qqq"},
    ]
    rng = np.random.default_rng(0)
    with open(root / "m.jsonl", "w") as f:
        for r in rows:
            r = dict(r, visual=rng.random(visual_dim).round(3).tolist(), audio=[0.5])
            f.write(json.dumps(r) + "\n")
    return root


def _prep(raw: Path, out: Path, *extra):
    ok("prep", "--manifest", raw / "m.jsonl", "--labels", raw / "labels.txt", "--embeddings", raw / "emb.txt",
       "--visual-dim", 2, "--audio-dim", 1, "--out", out, *extra)
    return out / "manifest.jsonl"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """A small synthetic corpus, prepared with a train/dev split plus a val set."""
    root = tmp_path_factory.mktemp("corpus")
    ok("synth", "--out", root / "raw", "--train", 160, "--val", 60, "--labels", 5, "--seed", 1)
    common = ["--labels", root / "raw/labels.txt", "--embeddings", root / "raw/embeddings.txt",
              "--bank", root / "raw/features.bin"]
    ok("prep", "--manifest", root / "raw/train.jsonl", *common, "--out", root / "train", "--split", 0.75, "--seed", 1)
    ok("prep", "--manifest", root / "raw/val.jsonl", *common, "--out", root / "val")
    ok("train", "unigram", "--data", root / "train/train.jsonl", "--out", root / "runs/uni", "--seed", 1)
    ok("train", "histogram", "--data", root / "train/train.jsonl", "--out", root / "runs/hist", "--seed", 1,
       "--clusters", 8, "--hidden", 16, "--epochs", 3)
    return root


# -- usage and exit codes ---------------------------------------------------------


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run() == 2
    assert run("frobnicate") == 2
    assert run("train") == 2
    assert run("train", "unigram", "--data", "x", "--out", "y") == 2  # no seed
    assert run("predict", "--top-k", "many") == 2
    assert run("synth", "--out", tmp_path / "s") == 2
    assert "error" in capsys.readouterr().err


def test_data_errors_exit_3(tmp_path, capsys):
    raw = _write_toy(tmp_path / "raw")
    (raw / "broken.jsonl").write_text('{"id": "a", "labels": [9], "visual": [0, 0], "audio": [0]}\n')
    assert run("prep", "--manifest", raw / "broken.jsonl", "--labels", raw / "labels.txt",
               "--embeddings", raw / "emb.txt", "--visual-dim", 2, "--audio-dim", 1, "--out", tmp_path / "p") == 3
    assert "unknown label" in capsys.readouterr().err
    assert run("predict", "--model", tmp_path / "nope", "--data", tmp_path / "nope.jsonl", "--out", tmp_path / "o") == 3


def test_config_file_defaults_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nseed = 4\ntrain = 30\nval = 10\nlabels = 3\n")
    assert read_config_file(cfg)["train"] == "30"
    ok("synth", "--config", cfg, "--out", tmp_path / "a")
    assert len((tmp_path / "a/train.jsonl").read_text().splitlines()) == 30
    ok("synth", "--config", cfg, "--out", tmp_path / "b", "--train", 12)
    assert len((tmp_path / "b/train.jsonl").read_text().splitlines()) == 12
    (tmp_path / "bad.cfg").write_text("seed = 4\ncolour = blue\n")
    assert run("synth", "--config", tmp_path / "bad.cfg", "--out", tmp_path / "c") == 2
    assert "colour" in capsys.readouterr().err
    (tmp_path / "dup.cfg").write_text("seed = 4\nseed = 5\n")
    assert run("synth", "--config", tmp_path / "dup.cfg", "--out", tmp_path / "c") == 2
    assert run("synth", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "c") == 2


def test_derived_seeds_differ_by_tag():
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert 0 <= derive_seed(2**40, "x") < 2**31


# -- prep ------------------------------------------------------------------------------


def test_prep_counts_and_leak_filter(tmp_path, capsys):
    raw = _write_toy(tmp_path / "raw")
    _prep(raw, tmp_path / "plain")
    out = capsys.readouterr().out
    assert "records            4" in out
    report = json.loads((tmp_path / "plain/prep_report.json").read_text())
    c = report["counts"]
    assert c["empty_title"] == 1 and c["empty_keywords"] == 1  # "" title, "42" keyword
    assert c["oov_only_title"] == 2  # "qqq", and "DOG" since titles keep their case
    assert c["no_usable_text"] == 1 and c["usable_both"] == 1
    assert report["leak_filter"] is False and report["leak_tokens_removed"] == 0
    _prep(raw, tmp_path / "filtered", "--leak-filter")
    report = json.loads((tmp_path / "filtered/prep_report.json").read_text())
    assert report["leak_tokens_removed"] > 0
    rows = [json.loads(l) for l in (tmp_path / "filtered/manifest.jsonl").read_text().splitlines()]
    assert rows[0].get("keywords", []) == [] and "cat" not in rows[0]["title"].lower().split()
    assert rows[2]["keywords"] == ["zebra"]


def test_prep_is_byte_identical_on_rerun(tmp_path):
    raw = _write_toy(tmp_path / "raw")
    _prep(raw, tmp_path / "one", "--split", 0.5, "--seed", 3)
    _prep(raw, tmp_path / "two", "--split", 0.5, "--seed", 3)
    for f in sorted(p.name for p in (tmp_path / "one").iterdir()):
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes(), f
    assert run("prep", "--manifest", raw / "m.jsonl", "--labels", raw / "labels.txt", "--embeddings", raw / "emb.txt",
               "--visual-dim", 2, "--audio-dim", 1, "--out", tmp_path / "x", "--split", 0.5) == 2


# -- train / predict ---------------------------------------------------------------


def test_unigram_run_matches_library(tmp_path):
    raw = _write_toy(tmp_path / "raw")
    data = _prep(raw, tmp_path / "p")
    ok("train", "unigram", "--data", data, "--out", tmp_path / "run", "--seed", 0)
    cfg = json.loads((tmp_path / "run/config.json").read_text())
    assert cfg["model"] == "unigram" and cfg["seed"] == 0
    ok("predict", "--model", tmp_path / "run", "--data", data, "--out", tmp_path / "p.csv", "--top-k", 3)
    preds = load_predictions(tmp_path / "p.csv", 3)
    from mmvc.cli import load_prepared

    ds = load_prepared(data).dataset
    model = unigram_fit(ds, "keywords")
    for p, r in zip(preds, ds.records):
        post = unigram_posterior(model, r.keyword_tokens)
        for label, conf in p.pairs:
            assert abs(conf - post[label]) < 1e-6


def test_predict_k1_and_sample(corpus):
    ok("predict", "--model", corpus / "runs/uni", "--data", corpus / "val/manifest.jsonl",
       "--out", corpus / "k1.csv", "--top-k", 1)
    rows = (corpus / "k1.csv").read_text().splitlines()[1:]
    assert len(rows) == 60 and all(len(r.split(",")[1].split()) == 2 for r in rows)
    assert run("predict", "--model", corpus / "runs/uni", "--data", corpus / "val/manifest.jsonl",
               "--out", corpus / "k9.csv", "--top-k", 9) == 2
    ok("train", "unigram", "--data", corpus / "train/train.jsonl", "--out", corpus / "runs/uq", "--seed", 2,
       "--sample", 0.25)
    log = json.loads((corpus / "runs/uq/train_log.json").read_text())
    cfg = json.loads((corpus / "runs/uq/config.json").read_text())
    assert cfg["trained_on"] == 30 and cfg["sample"] == 0.25  # a quarter of 120 training videos
    assert log


def test_moe_dim_mismatch_names_modality(tmp_path, capsys):
    a = _prep(_write_toy(tmp_path / "a"), tmp_path / "pa")
    b_raw = _write_toy(tmp_path / "b", visual_dim=3)
    ok("prep", "--manifest", b_raw / "m.jsonl", "--labels", b_raw / "labels.txt", "--embeddings", b_raw / "emb.txt",
       "--visual-dim", 3, "--audio-dim", 1, "--out", tmp_path / "pb")
    ok("train", "moe", "--data", a, "--out", tmp_path / "moe", "--seed", 0, "--experts", 2, "--epochs", 2)
    capsys.readouterr()
    assert run("predict", "--model", tmp_path / "moe", "--data", tmp_path / "pb/manifest.jsonl",
               "--out", tmp_path / "x.csv") == 3
    assert "'visual'" in capsys.readouterr().err
    assert run("train", "moe", "--data", a, "--out", tmp_path / "m2", "--seed", 0,
               "--modalities", "visual,keyword") == 2


def test_train_is_deterministic(corpus, tmp_path):
    for name in ("h1", "h2"):
        ok("train", "histogram", "--data", corpus / "train/train.jsonl", "--out", tmp_path / name, "--seed", 5,
           "--clusters", 8, "--hidden", 16, "--epochs", 2)
    for f in ("centroids.mmkm", "decoder.mmnn", "config.json", "train_log.json"):
        assert (tmp_path / "h1" / f).read_bytes() == (tmp_path / "h2" / f).read_bytes(), f


# -- ensemble / score ----------------------------------------------------------------


def _predict(corpus, run_name, data, out):
    ok("predict", "--model", corpus / "runs" / run_name, "--data", data, "--out", out)
    return out


def test_ensemble_single_input_is_identity(corpus, tmp_path):
    p = _predict(corpus, "hist", corpus / "val/manifest.jsonl", tmp_path / "h.csv")
    for strategy in ("avg", "max"):
        ok("ensemble", "--inputs", p, "--labels", corpus / "val/labels.txt", "--strategy", strategy,
           "--out", tmp_path / f"{strategy}.csv")
        assert (tmp_path / f"{strategy}.csv").read_bytes() == p.read_bytes()


def test_ensemble_forest_contract(corpus, tmp_path):
    val = corpus / "val/manifest.jsonl"
    dev = corpus / "train/dev.jsonl"
    a, b = _predict(corpus, "uni", val, tmp_path / "u.csv"), _predict(corpus, "hist", val, tmp_path / "h.csv")
    fa, fb = _predict(corpus, "uni", dev, tmp_path / "du.csv"), _predict(corpus, "hist", dev, tmp_path / "dh.csv")
    labels = ["--labels", corpus / "val/labels.txt"]
    assert run("ensemble", "--inputs", a, b, *labels, "--strategy", "forest", "--out", tmp_path / "f.csv",
               "--seed", 1) == 2
    assert run("ensemble", "--inputs", a, *labels, "--strategy", "forest", "--truth", dev, "--fit-inputs", fa,
               "--out", tmp_path / "f.csv", "--seed", 1) == 2
    ok("ensemble", "--inputs", a, b, *labels, "--strategy", "forest", "--truth", dev, "--fit-inputs", fa, fb,
       "--num-trees", 5, "--forest-out", tmp_path / "forest.jsonl", "--out", tmp_path / "f.csv", "--seed", 1)
    assert len((tmp_path / "forest.jsonl").read_text().splitlines()) == 6
    ok("score", "--predictions", tmp_path / "f.csv", "--truth", val)


def test_ensemble_avg_matches_mean_of_inputs(corpus, tmp_path):
    val = corpus / "val/manifest.jsonl"
    a, b = _predict(corpus, "uni", val, tmp_path / "u.csv"), _predict(corpus, "hist", val, tmp_path / "h.csv")
    ok("ensemble", "--inputs", a, b, "--labels", corpus / "val/labels.txt", "--out", tmp_path / "avg.csv")
    pa, pb, avg = (load_predictions(p, 5) for p in (a, b, tmp_path / "avg.csv"))
    for x, y, z in zip(pa, pb, avg):
        da, db = dict(x.pairs), dict(y.pairs)
        for label, conf in z.pairs:
            assert abs(conf - (da.get(label, 0.0) + db.get(label, 0.0)) / 2) < 2e-6
    bad = tmp_path / "short.csv"
    bad.write_text("\n".join(b.read_text().splitlines()[:-1]) + "\n")
    assert run("ensemble", "--inputs", a, bad, "--labels", corpus / "val/labels.txt", "--out", tmp_path / "z.csv") == 3


def _perfect_predictions(manifest: Path, out: Path):
    lines = ["VideoId,LabelConfidencePairs"]
    for line in manifest.read_text().splitlines():
        r = json.loads(line)
        lines.append(r["id"] + "," + " ".join(f"{l} 1.000000" for l in sorted(r["labels"])))
    out.write_text("\n".join(lines) + "\n")
    return out


def test_score_perfect_sample_and_per_label(corpus, tmp_path, capsys):
    val = corpus / "val/manifest.jsonl"
    perfect = _perfect_predictions(val, tmp_path / "perfect.csv")
    ok("score", "--predictions", perfect, "--truth", val, "--out", tmp_path / "r.json")
    r = json.loads((tmp_path / "r.json").read_text())
    assert (r["gap"], r["map"], r["hit_at_1"], r["perr"]) == (1.0, 1.0, 1.0, 1.0)
    assert r["counts"]["videos"] == 60 and r["k"] == 20
    ok("score", "--predictions", perfect, "--truth", val, "--sample", 20, "--seed", 3, "--out", tmp_path / "s.json")
    assert json.loads((tmp_path / "s.json").read_text())["counts"]["videos"] == 20
    assert run("score", "--predictions", perfect, "--truth", val, "--sample", 20) == 2
    h = _predict(corpus, "hist", val, tmp_path / "h.csv")
    ok("score", "--predictions", h, "--truth", val, "--per-label", tmp_path / "pl.csv")
    rows = list(csv.DictReader((tmp_path / "pl.csv").open()))
    assert rows and list(rows[0]) == ["rank", "label", "name", "positives", "gap"]
    positives = [int(r["positives"]) for r in rows]
    assert positives == sorted(positives, reverse=True)
    assert (tmp_path / "pl.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    ok("score", "--predictions", h, "--truth", val, "--per-label", tmp_path / "nf.csv", "--no-figure")
    assert not (tmp_path / "nf.png").exists()


def test_score_rejects_mismatched_ids(corpus, tmp_path, capsys):
    val = corpus / "val/manifest.jsonl"
    perfect = _perfect_predictions(val, tmp_path / "perfect.csv")
    lines = perfect.read_text().splitlines()
    (tmp_path / "missing.csv").write_text("\n".join(lines[:-1]) + "\n")
    assert run("score", "--predictions", tmp_path / "missing.csv", "--truth", val) == 3
    assert "missing" in capsys.readouterr().err
    (tmp_path / "extra.csv").write_text("\n".join(lines + ["ghost,0 0.5"]) + "\n")
    assert run("score", "--predictions", tmp_path / "extra.csv", "--truth", val) == 3
