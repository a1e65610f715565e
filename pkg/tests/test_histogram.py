import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmvc.data import DataError
from mmvc.histogram import (
    CentroidSet,
    HistogramDecoder,
    decoder_predict,
    decoder_train,
    histogram_feature,
    histogram_matrix,
    kmeans_fit,
    nearest_centroid,
)
from mmvc.text import EmbeddingTable

from oracles import best_partition_inertia

FIXTURES = Path(__file__).parent / "fixtures"
FOUR = np.array([[0, 0], [0, 1], [10, 10], [10, 11]], dtype=float)


def test_four_point_example():
    c = kmeans_fit(FOUR, 2, seed=0)
    rows = sorted(map(tuple, c.centroids))
    assert rows == [(0.0, 0.5), (10.0, 10.5)]
    assert c.inertia == 1.0 == best_partition_inertia(FOUR, 2)


def test_k_equals_n_and_errors():
    pts = np.random.default_rng(0).standard_normal((5, 3))
    c = kmeans_fit(pts, 5, seed=1)
    assert c.inertia == 0.0
    assert sorted(map(tuple, c.centroids)) == sorted(map(tuple, pts))
    with pytest.raises(ValueError):
        kmeans_fit(pts, 6, seed=0)
    with pytest.raises(ValueError):
        kmeans_fit(np.array([[np.nan, 0.0]]), 1, seed=0)


def test_kmeans_deterministic_per_seed():
    pts = np.random.default_rng(3).standard_normal((60, 4))
    a, b = kmeans_fit(pts, 5, seed=9), kmeans_fit(pts, 5, seed=9)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    assert a.history == b.history


def test_duplicate_points_do_not_break_seeding():
    pts = np.array([[1.0, 1.0]] * 4 + [[2.0, 2.0]])
    c = kmeans_fit(pts, 3, seed=0)
    assert c.inertia == 0.0 and np.all(np.isfinite(c.centroids))


@pytest.mark.parametrize("seed", range(100))
def test_inertia_never_increases(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(4, 40)), int(rng.integers(1, 5))
    pts = rng.standard_normal((n, d)) * rng.uniform(0.1, 5)
    k = int(rng.integers(1, min(n, 6) + 1))
    c = kmeans_fit(pts, k, seed=seed)
    h = np.array(c.history)
    assert np.all(h[1:] <= h[:-1] * (1 + 1e-12) + 1e-12)
    assert c.inertia == h[-1]


@pytest.mark.parametrize("seed", range(30))
def test_inertia_near_exhaustive_optimum(seed):
    # Lloyd is a local method; best of a few restarts should hit the optimum on tiny inputs
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(3, 8)), int(rng.integers(1, 4))
    pts = rng.standard_normal((n, 2))
    best = best_partition_inertia(pts, min(k, n))
    got = min(kmeans_fit(pts, min(k, n), seed=s).inertia for s in range(8))
    assert got >= best - 1e-9
    assert got <= best + 1e-9


def test_nearest_centroid_examples():
    c = CentroidSet(np.array([[0, 0.5], [10, 10.5]]), 1.0)
    assert nearest_centroid(c.centroids[1], c) == 1
    assert nearest_centroid([0, 0.4], c) == 0
    tie = CentroidSet(np.array([[5.0, 5.0], [1.0, 0.0], [9.0, 9.0], [-1.0, 0.0]]), 0.0)
    assert nearest_centroid([0.0, 0.0], tie) == 1
    with pytest.raises(ValueError):
        nearest_centroid([0.0], c)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_nearest_centroid_matches_scan(seed):
    rng = np.random.default_rng(seed)
    k, d = int(rng.integers(1, 8)), int(rng.integers(1, 4))
    c = CentroidSet(rng.integers(-3, 4, (k, d)).astype(float), 0.0)
    v = rng.integers(-3, 4, d).astype(float)
    dists = [float(((row - v) ** 2).sum()) for row in c.centroids]
    assert nearest_centroid(v, c) == dists.index(min(dists))


TABLE = EmbeddingTable(1, {"a": np.array([0.0]), "b": np.array([10.0]), "c": np.array([31.0])})
CENTS = CentroidSet(np.array([[0.0], [10.0], [20.0], [30.0]]), 0.0)


def test_histogram_examples():
    np.testing.assert_array_equal(histogram_feature(["a", "a", "c"], TABLE, CENTS), [2, 0, 0, 1])
    np.testing.assert_array_equal(histogram_feature(["zz", "yy"], TABLE, CENTS), [0, 0, 0, 0])
    np.testing.assert_array_equal(histogram_feature(["c", "a", "a"], TABLE, CENTS),
                                  histogram_feature(["a", "c", "a"], TABLE, CENTS))
    m = histogram_matrix([["b"], [], ["a", "q", "b"]], TABLE, CENTS)
    np.testing.assert_array_equal(m.sum(axis=1), [1, 0, 2])
    assert histogram_matrix([], TABLE, CENTS).shape == (0, 4)


def test_centroid_file_round_trip(tmp_path):
    c = kmeans_fit(np.random.default_rng(4).standard_normal((20, 3)), 4, seed=0)
    c.save(tmp_path / "c.mmkm")
    raw = (tmp_path / "c.mmkm").read_bytes()
    assert raw[:4] == b"MMKM" and len(raw) == 12 + 4 * 12 + 8
    back = CentroidSet.load(tmp_path / "c.mmkm")
    assert back.inertia == c.inertia
    np.testing.assert_array_equal(back.centroids, c.centroids.astype(np.float32))
    (tmp_path / "bad.mmkm").write_bytes(raw[:-3])
    with pytest.raises(DataError):
        CentroidSet.load(tmp_path / "bad.mmkm")
    with pytest.raises(DataError):
        CentroidSet.load(tmp_path / "nope.mmkm")


def _toy():
    fx = json.loads((FIXTURES / "decoder_toy.json").read_text())
    x = np.array(fx["x"])
    y = np.zeros((20, 2))
    y[np.arange(20), np.arange(20) % 2] = 1
    return x, y, np.array(fx["scores"])


def test_decoder_separable_toy_matches_fixture():
    x, y, expected = _toy()
    m = decoder_train(x, y, hidden=8, lr=1e-2, batch_size=20, epochs=200, seed=3)
    s = decoder_predict(m, x)
    assert (s.argmax(axis=1) == y.argmax(axis=1)).mean() == 1.0
    np.testing.assert_allclose(s, expected, atol=1e-6)
    again = decoder_train(x, y, hidden=8, lr=1e-2, batch_size=20, epochs=200, seed=3)
    for k in m.params:
        np.testing.assert_array_equal(m.params[k], again.params[k])


def test_decoder_zero_epochs_and_zero_head():
    x, y, _ = _toy()
    m = decoder_train(x, y, hidden=8, epochs=0, seed=5)
    init = HistogramDecoder(4, 2, hidden=8, seed=5)
    for k in m.params:
        np.testing.assert_array_equal(m.params[k], init.params[k])
    init.params["fc2.W"][:] = 0
    np.testing.assert_array_equal(decoder_predict(init, x), 0.5)


def test_decoder_rows_are_independent_and_checks_dims(tmp_path):
    x, y, _ = _toy()
    m = decoder_train(x, y, hidden=8, epochs=3, seed=1)
    full = decoder_predict(m, x[:8])
    np.testing.assert_array_equal(decoder_predict(m, x[2:3])[0], full[2])
    with pytest.raises(ValueError):
        decoder_predict(m, np.zeros((1, 5)))
    with pytest.raises(ValueError):
        decoder_train(x, y[:3])
    m.save(tmp_path / "d.mmnn")
    back = HistogramDecoder.load(tmp_path / "d.mmnn")
    np.testing.assert_allclose(decoder_predict(back, x), decoder_predict(m, x), atol=1e-5)
