import numpy as np
import pytest

from mmvc.plotting import plot_per_label_gap
from mmvc.synthetic import fusion_blocks, marker_titles, text_corpus, write_corpus
from mmvc.text import normalize_keywords


def test_fusion_blocks_shapes_and_labels():
    blocks, y = fusion_blocks(50, 0, visual_groups=3, text_groups=2, dim=4, nuisance=5, coarse=True)
    assert blocks["visual"].shape == (50, 9) and blocks["text"].shape == (50, 9)
    assert y.shape == (50, 3 * 2 + 3 + 2)
    assert np.all(y.sum(axis=1) == 3)  # one fine, one visual group, one text group label
    again, y2 = fusion_blocks(50, 0, visual_groups=3, text_groups=2, dim=4, nuisance=5, coarse=True)
    np.testing.assert_array_equal(again["visual"], blocks["visual"])
    np.testing.assert_array_equal(y, y2)


def test_marker_titles_label_iff_marker():
    table, titles, labels = marker_titles(100, 3)
    markers = [f"w{c}" for c in range(4)]
    norms = np.linalg.norm(np.stack(list(table.table.values())), axis=1)
    np.testing.assert_allclose(norms, 1.0)
    assert labels.shape == (100, 4) and np.all(labels.sum(axis=1) >= 1)
    for toks, row in zip(titles, labels):
        assert {c for c in range(4) if markers[c] in toks} == set(np.flatnonzero(row))


def test_text_corpus_is_deterministic_and_normalizable(tmp_path):
    a = text_corpus(40, 10, 2, num_labels=4)
    b = text_corpus(40, 10, 2, num_labels=4)
    assert a.train.ids == b.train.ids and len(a.val) == 10
    for r in a.train.records:
        # keyword words survive normalization (no digits inside words)
        assert len(normalize_keywords(r.keyword_tokens)) <= len(r.keyword_tokens)
    paths = write_corpus(tmp_path / "c", a)
    write_corpus(tmp_path / "d", b)
    for name, p in paths.items():
        assert p.read_bytes() == (tmp_path / "d" / p.name).read_bytes(), name


def test_per_label_figure_is_deterministic(tmp_path):
    rows = [{"rank": i + 1, "label": i, "name": f"l{i}", "positives": 100 // (i + 1), "gap": 0.9 - 0.05 * i}
            for i in range(12)]
    plot_per_label_gap(rows, tmp_path / "a.png")
    plot_per_label_gap(rows, tmp_path / "b.png")
    raw = (tmp_path / "a.png").read_bytes()
    assert raw[:8] == b"\x89PNG\r\n\x1a\n" and raw == (tmp_path / "b.png").read_bytes()
    with pytest.raises(ValueError):
        plot_per_label_gap([], tmp_path / "empty.png")
