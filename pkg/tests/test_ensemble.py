import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmvc.data import DataError
from mmvc.ensemble import (
    ForestModel,
    ScoreMatrix,
    Tree,
    average_pool,
    forest_predict,
    forest_train,
    max_pool,
)

from oracles import elementwise

FIXTURES = Path(__file__).parent / "fixtures"


def _sm(rows, ids=None):
    rows = np.asarray(rows, dtype=float)
    return ScoreMatrix(ids or [f"v{i}" for i in range(len(rows))], rows)


def test_pooling_examples():
    a, b = _sm([[0.2, 0.8]]), _sm([[0.6, 0.4]])
    np.testing.assert_allclose(average_pool([a, b]).scores, [[0.4, 0.6]])
    np.testing.assert_array_equal(max_pool([a, b]).scores, [[0.6, 0.8]])
    for pool in (average_pool, max_pool):
        np.testing.assert_array_equal(pool([a]).scores, a.scores)
        np.testing.assert_array_equal(pool([a, a, a]).scores, a.scores)


def test_misaligned_inputs_rejected():
    a = _sm([[0.1], [0.2]], ["x", "y"])
    with pytest.raises(ValueError, match="aligned"):
        average_pool([a, _sm([[0.1], [0.2]], ["y", "x"])])
    with pytest.raises(ValueError, match="shape"):
        max_pool([a, _sm([[0.1, 0.3], [0.2, 0.3]], ["x", "y"])])
    with pytest.raises(ValueError):
        average_pool([])
    with pytest.raises(ValueError):
        ScoreMatrix(["x"], np.zeros((2, 1)))


mats = st.integers(1, 5).flatmap(lambda m: st.tuples(st.integers(1, 5), st.integers(1, 4)).flatmap(
    lambda s: st.lists(st.lists(st.lists(st.floats(0, 1), min_size=s[1], max_size=s[1]),
                                min_size=s[0], max_size=s[0]), min_size=m, max_size=m)))


@settings(max_examples=300, deadline=None)
@given(mats, st.randoms(use_true_random=False))
def test_pooling_matches_elementwise_oracle(raw, rnd):
    ms = [_sm(r) for r in raw]
    arrays = [m.scores for m in ms]
    avg, mx = average_pool(ms).scores, max_pool(ms).scores
    np.testing.assert_allclose(avg, elementwise(lambda v: sum(v) / len(v), arrays), rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(mx, elementwise(max, arrays))
    assert np.all(mx >= avg - 1e-15) and np.all((avg >= 0) & (avg <= 1))
    shuffled = list(ms)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(average_pool(shuffled).scores, avg, rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(max_pool(shuffled).scores, mx)


def test_tree_vote_fraction_example():
    leaf = lambda v: Tree(feature=[-1], threshold=[0.0], left=[-1], right=[-1], vote=[v])
    forest = ForestModel([leaf(1), leaf(1), leaf(0)], 1, 1, 0)
    np.testing.assert_allclose(forest.vote_fraction(np.zeros((2, 1))), [2 / 3, 2 / 3])
    with pytest.raises(ValueError):
        forest.vote_fraction(np.zeros((2, 2)))


def test_forest_degenerate_targets():
    a, b = _sm(np.random.default_rng(0).random((5, 3))), _sm(np.random.default_rng(1).random((5, 3)))
    f = forest_train([a, b], np.zeros((5, 3)), num_trees=4, seed=0)
    np.testing.assert_array_equal(forest_predict(f, [a, b]).scores, 0.0)
    assert all(t.feature == [-1] for t in f.trees)
    with pytest.raises(ValueError):
        forest_train([a], np.zeros((5, 3)))


def test_forest_informative_feature_depth_one():
    rng = np.random.default_rng(3)
    y = (rng.random((30, 4)) < 0.3).astype(float)
    a, b = _sm(y), _sm(rng.random((30, 4)))
    f = forest_train([a, b], y, num_trees=15, max_depth=1, seed=2)
    pred = forest_predict(f, [a, b]).scores
    assert ((pred >= 0.5) == (y == 1)).mean() == 1.0
    assert set(np.unique(pred)) <= {0.0, 1.0}
    g = forest_train([a, b], y, num_trees=15, max_depth=1, seed=2)
    assert [t.to_json() for t in f.trees] == [t.to_json() for t in g.trees]


def test_forest_nodes_respect_depth_and_feature_range():
    rng = np.random.default_rng(4)
    y = (rng.random((20, 5)) < 0.3).astype(float)
    ms = [_sm(np.clip(y * 0.5 + rng.random((20, 5)) * 0.5, 0, 1)) for _ in range(5)]
    f = forest_train(ms, y, num_trees=10, max_depth=3, seed=1)
    for t in f.trees:
        assert all(-1 <= feat < 5 for feat in t.feature)
        depth = {0: 0}
        for i, feat in enumerate(t.feature):
            if feat >= 0:
                depth[t.left[i]] = depth[t.right[i]] = depth[i] + 1
        assert max(depth.values()) <= 3


def test_forest_fixture_and_round_trip(tmp_path):
    f = ForestModel.load(FIXTURES / "forest.jsonl")
    io = json.loads((FIXTURES / "forest_io.json").read_text())
    ids = [f"w{i}" for i in range(4)]
    out = forest_predict(f, [ScoreMatrix(ids, np.array(x)) for x in io["inputs"]])
    np.testing.assert_array_equal(out.scores, io["scores"])
    f.save(tmp_path / "f.jsonl")
    assert (tmp_path / "f.jsonl").read_bytes() == (FIXTURES / "forest.jsonl").read_bytes()
    (tmp_path / "bad.jsonl").write_text('{"num_features": 2}\n{"nodes": [{"feature": 0}]}\n')
    with pytest.raises(DataError):
        ForestModel.load(tmp_path / "bad.jsonl")
    with pytest.raises(DataError):
        ForestModel.load(tmp_path / "missing.jsonl")
