import numpy as np
import pytest

from predbench.forest import (
    Forest,
    ForestParams,
    fit_random_forest,
    gini_importance,
    predict_forest,
)
from predbench.streams import derive_stream


def stream(seed=0, rep=0):
    return derive_stream(seed, "forest-test", rep, "forest")


def test_single_class_outcome_gives_single_leaf_trees():
    X = np.random.default_rng(0).standard_normal((20, 3))
    y = np.ones(20)
    f = fit_random_forest(X, y, stream(), ForestParams(n_trees=10))
    # every tree is one leaf node predicting 1.0
    assert len(f.feature) == 10
    assert np.all(f.feature == -1)
    assert np.allclose(predict_forest(f, X), 1.0)


def test_hand_traced_root_split():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([0, 0, 1, 1])
    f = fit_random_forest(
        X, y, stream(3),
        ForestParams(n_trees=1, mtry=1, min_node_size=1),
    )
    # root splits between 0 and 1; children are pure leaves
    assert f.feature[0] == 0
    assert f.threshold[0] == pytest.approx(0.5)
    preds = predict_forest(f, np.array([[0.0], [1.0]]))
    assert preds[0] == pytest.approx(0.0)
    assert preds[1] == pytest.approx(1.0)


def test_same_stream_identical_forests():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((60, 4))
    y = (rng.random(60) < 0.4).astype(int)
    f1 = fit_random_forest(X, y, stream(5), ForestParams(n_trees=20))
    f2 = fit_random_forest(X, y, stream(5), ForestParams(n_trees=20))
    assert np.array_equal(f1.feature, f2.feature)
    assert np.array_equal(f1.threshold, f2.threshold)
    assert np.array_equal(f1.raw_importance, f2.raw_importance)
    f3 = fit_random_forest(X, y, stream(6), ForestParams(n_trees=20))
    assert not np.array_equal(f1.threshold, f3.threshold)


def test_predictions_average_leaf_fractions():
    # build a 2-tree forest by hand: single-leaf trees with fractions 0.2, 0.6
    f = Forest(
        feature=np.array([-1, -1], dtype=np.int32),
        threshold=np.zeros(2),
        left=np.array([-1, -1], dtype=np.int32),
        right=np.array([-1, -1], dtype=np.int32),
        leaf_frac=np.array([0.2, 0.6]),
        tree_offsets=np.array([0, 1, 2], dtype=np.int64),
        params=ForestParams(n_trees=2),
        n_features=3,
        raw_importance=np.zeros(3),
    )
    preds = predict_forest(f, np.zeros((4, 3)))
    assert np.allclose(preds, 0.4)


def test_predictions_within_unit_interval_and_permutation_equivariant():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((80, 5))
    y = (rng.random(80) < 0.3).astype(int)
    f = fit_random_forest(X, y, stream(7), ForestParams(n_trees=30))
    Xn = rng.standard_normal((40, 5))
    p = predict_forest(f, Xn)
    assert np.all((p >= 0) & (p <= 1))
    perm = rng.permutation(40)
    assert np.array_equal(predict_forest(f, Xn[perm]), p[perm])


def test_prediction_dimension_mismatch():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((30, 4))
    y = (rng.random(30) < 0.5).astype(int)
    f = fit_random_forest(X, y, stream(), ForestParams(n_trees=5))
    with pytest.raises(ValueError, match="columns"):
        predict_forest(f, rng.standard_normal((10, 3)))


class TestImportance:
    def test_unused_variable_has_zero_importance(self):
        # one informative binary column, one constant column (never splittable)
        rng = np.random.default_rng(4)
        x0 = rng.integers(0, 2, 100).astype(float)
        X = np.column_stack([x0, np.zeros(100)])
        y = x0.astype(int)
        f = fit_random_forest(X, y, stream(8), ForestParams(n_trees=20, mtry=2, min_node_size=1))
        imp = gini_importance(f)
        assert imp.raw[1] == 0.0
        assert imp.raw[0] > 0.0

    def test_importances_nonnegative(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((100, 6))
        y = (rng.random(100) < 0.4).astype(int)
        f = fit_random_forest(X, y, stream(9), ForestParams(n_trees=40))
        imp = gini_importance(f)
        assert np.all(imp.raw >= 0.0)
        assert np.array_equal(imp.clamped, np.maximum(imp.raw, 0.0))

    def test_strong_predictor_wins_argmax(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            X = rng.standard_normal((500, 6))
            eta = 2.5 * X[:, 2] - 1.0
            y = (rng.random(500) < 1 / (1 + np.exp(-eta))).astype(int)
            f = fit_random_forest(X, y, stream(seed), ForestParams(n_trees=50))
            if int(np.argmax(gini_importance(f).raw)) == 2:
                hits += 1
        assert hits >= 95


def test_mtry_default_is_floor_sqrt_p():
    assert ForestParams().resolved_mtry(50) == 7
    assert ForestParams().resolved_mtry(2) == 1
    assert ForestParams(mtry=3).resolved_mtry(5) == 3
    with pytest.raises(ValueError):
        ForestParams(mtry=9).resolved_mtry(5)


def test_min_node_size_stops_recursion():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((100, 2))
    y = (rng.random(100) < 0.5).astype(int)
    big = fit_random_forest(X, y, stream(10), ForestParams(n_trees=5, min_node_size=50))
    small = fit_random_forest(X, y, stream(10), ForestParams(n_trees=5, min_node_size=2))
    assert len(big.feature) < len(small.feature)


def test_param_validation():
    with pytest.raises(ValueError):
        ForestParams(n_trees=0)
    with pytest.raises(ValueError):
        ForestParams(min_node_size=0)
    with pytest.raises(ValueError):
        ForestParams(bootstrap_fraction=0.5)
