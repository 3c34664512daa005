"""Tree, forest, and boosting tests.

The split search is checked against an exhaustive brute-force oracle
that enumerates every (feature, midpoint) candidate with the same
tie-break policy (lowest feature, then lowest threshold, strict
improvement only). Tree traversal is checked against a per-row Python
walk. Neither oracle shares code with the implementation.
"""

import numpy as np
import pytest

from ossmm_kit.errors import (
    DimensionMismatchError,
    EmptyInputError,
    MissingClassError,
    ValidationError,
)
from ossmm_kit.ml import (
    ClassifierConfig,
    DecisionTree,
    build_tree,
    train_gradient_boosted_trees,
    train_random_forest,
)
from ossmm_kit.ml.trees import LEAF, gini, mtry_default


def _gini_of(labels, k=4):
    counts = np.bincount(labels, minlength=k)
    n = counts.sum()
    p = counts / n
    return 1.0 - float(np.sum(p * p))


def brute_force_best_split(X, y, min_leaf, k=4):
    """(score, feature, threshold) by exhaustive enumeration."""
    n, d = X.shape
    best = None
    for f in range(d):
        vals = np.unique(X[:, f])
        for a, b in zip(vals, vals[1:]):
            thr = 0.5 * (a + b)
            mask = X[:, f] <= thr
            nl, nr = int(mask.sum()), int((~mask).sum())
            if nl < min_leaf or nr < min_leaf:
                continue
            score = (nl * _gini_of(y[mask], k) + nr * _gini_of(y[~mask], k)) / n
            if best is None or score < best[0] - 1e-12:
                best = (score, f, thr)
    return best


def _walk(tree, row):
    """Reference traversal, one node at a time."""
    node = 0
    while tree.feature[node] != LEAF:
        if row[tree.feature[node]] <= tree.threshold[node]:
            node = tree.left[node]
        else:
            node = tree.right[node]
    return node


def _blobs(rng, n_per=40, d=6, k=4, spread=1.0):
    X = np.vstack([rng.standard_normal((n_per, d)) * spread + 4.0 * c
                   for c in range(k)])
    y = np.repeat(np.arange(k), n_per)
    return X, y


class TestGini:
    def test_hand_values(self):
        assert gini(np.array([5.0, 5.0])) == pytest.approx(0.5)
        assert gini(np.array([10.0, 0.0])) == 0.0
        assert gini(np.array([1.0, 1.0, 1.0, 1.0])) == pytest.approx(0.75)
        assert gini(np.array([0.0, 0.0])) == 0.0


class TestSplitSearch:
    @pytest.mark.parametrize("seed", range(6))
    def test_root_split_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 40, 4
        X = np.round(rng.standard_normal((n, d)) * 3.0, 1)   # force ties
        y = rng.integers(0, 4, n)
        for min_leaf in (1, 3):
            want = brute_force_best_split(X, y, min_leaf)
            tree = build_tree(X, y, task="classify", n_classes=4, max_depth=1,
                              min_samples_leaf=min_leaf)
            if want is None:
                assert tree.feature[0] == LEAF
                continue
            score, f, thr = want
            assert tree.feature[0] == f
            assert tree.threshold[0] == pytest.approx(thr, abs=1e-12)

    def test_obvious_split_found(self):
        X = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])
        y = np.array([0, 0, 0, 1, 1, 1])
        tree = build_tree(X, y, task="classify", n_classes=2, max_depth=1)
        assert tree.feature[0] == 0
        assert tree.threshold[0] == pytest.approx(6.0)

    def test_constant_features_make_a_leaf(self):
        X = np.ones((20, 3))
        y = np.array([0, 1] * 10)
        tree = build_tree(X, y, task="classify", n_classes=2, max_depth=5)
        assert tree.n_nodes == 1
        assert tree.feature[0] == LEAF


class TestTreeStructure:
    def test_traversal_matches_reference_walk(self):
        rng = np.random.default_rng(9)
        X, y = _blobs(rng, spread=2.5)
        tree = build_tree(X, y, task="classify", n_classes=4, max_depth=6)
        got = tree.apply(X)
        want = np.array([_walk(tree, row) for row in X])
        np.testing.assert_array_equal(got, want)

    def test_max_depth_respected(self):
        rng = np.random.default_rng(10)
        X, y = _blobs(rng, spread=4.0)
        for depth in (1, 2, 4):
            tree = build_tree(X, y, task="classify", n_classes=4, max_depth=depth)

            def node_depth(node, d=0):
                if tree.feature[node] == LEAF:
                    return d
                return max(node_depth(tree.left[node], d + 1),
                           node_depth(tree.right[node], d + 1))
            assert node_depth(0) <= depth

    def test_min_leaf_respected(self):
        rng = np.random.default_rng(11)
        X, y = _blobs(rng, spread=3.0)
        tree = build_tree(X, y, task="classify", n_classes=4, max_depth=12,
                          min_samples_leaf=5)
        leaves = tree.feature == LEAF
        assert np.all(tree.n_node[leaves] >= 5)

    def test_separable_data_fit_exactly(self):
        rng = np.random.default_rng(12)
        X, y = _blobs(rng, spread=0.5)
        tree = build_tree(X, y, task="classify", n_classes=4, max_depth=10)
        assert np.mean(tree.predict(X) == y) == 1.0

    def test_node_counts_conserve(self):
        rng = np.random.default_rng(13)
        X, y = _blobs(rng)
        tree = build_tree(X, y, task="classify", n_classes=4, max_depth=8)
        for i in range(tree.n_nodes):
            if tree.feature[i] != LEAF:
                assert tree.n_node[i] == (tree.n_node[tree.left[i]]
                                          + tree.n_node[tree.right[i]])

    def test_serialization_roundtrip(self):
        rng = np.random.default_rng(14)
        X, y = _blobs(rng, spread=2.0)
        tree = build_tree(X, y, task="classify", n_classes=4, max_depth=6)
        again = DecisionTree.from_dict(tree.to_dict())
        np.testing.assert_array_equal(again.feature, tree.feature)
        np.testing.assert_array_equal(again.threshold, tree.threshold)
        np.testing.assert_array_equal(again.value, tree.value)
        np.testing.assert_array_equal(again.predict(X), tree.predict(X))

    def test_empty_and_bad_task(self):
        with pytest.raises(EmptyInputError):
            build_tree(np.empty((0, 3)), np.empty(0), task="classify",
                       n_classes=2, max_depth=3)
        with pytest.raises(ValidationError):
            build_tree(np.ones((4, 2)), np.zeros(4), task="cluster", max_depth=3)


class TestRegressionTree:
    def test_fits_step_function(self):
        X = np.linspace(0, 10, 60).reshape(-1, 1)
        g = np.where(X[:, 0] < 5.0, -1.0, 2.0)
        tree = build_tree(X, g, task="regress", max_depth=2)
        pred = tree.predict(X)
        np.testing.assert_allclose(pred, g, atol=1e-12)

    def test_leaf_value_is_mean(self):
        X = np.ones((10, 2))
        g = np.arange(10.0)
        tree = build_tree(X, g, task="regress", max_depth=3)
        assert tree.n_nodes == 1
        assert tree.value[0] == pytest.approx(g.mean())


RF_CFG = ClassifierConfig("random_forest",
                          {"n_estimators": 15, "max_depth": 6,
                           "min_samples_split": 2, "min_samples_leaf": 1})
GBT_CFG = ClassifierConfig("gradient_boosted_trees",
                           {"n_estimators": 20, "max_depth": 3,
                            "learning_rate": 0.2})
ORDER4 = (0, 1, 2, 3)


class TestRandomForest:
    def test_learns_blobs(self):
        rng = np.random.default_rng(20)
        X, y = _blobs(rng, n_per=50, spread=1.5)
        Xt, yt = _blobs(rng, n_per=30, spread=1.5)
        model = train_random_forest(RF_CFG, X, y, ORDER4, seed=5)
        assert np.mean(model.predict(Xt) == yt) > 0.95

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(21)
        X, y = _blobs(rng, spread=2.0)
        a = train_random_forest(RF_CFG, X, y, ORDER4, seed=7)
        b = train_random_forest(RF_CFG, X, y, ORDER4, seed=7)
        for ta, tb in zip(a.trees, b.trees):
            np.testing.assert_array_equal(ta.feature, tb.feature)
            np.testing.assert_array_equal(ta.threshold, tb.threshold)

    def test_seed_changes_trees(self):
        rng = np.random.default_rng(22)
        X, y = _blobs(rng, spread=2.0)
        a = train_random_forest(RF_CFG, X, y, ORDER4, seed=1)
        b = train_random_forest(RF_CFG, X, y, ORDER4, seed=2)
        assert any(not np.array_equal(ta.threshold, tb.threshold)
                   for ta, tb in zip(a.trees, b.trees))

    def test_mtry_default_floor_sqrt(self):
        assert mtry_default(42) == 6
        assert mtry_default(16) == 4
        assert mtry_default(2) == 1

    def test_missing_class_rejected(self):
        X = np.random.default_rng(23).standard_normal((30, 4))
        y = np.array([0, 1, 2] * 10)
        with pytest.raises(MissingClassError):
            train_random_forest(RF_CFG, X, y, ORDER4, seed=0)

    def test_predict_width_checked(self):
        rng = np.random.default_rng(24)
        X, y = _blobs(rng)
        model = train_random_forest(RF_CFG, X, y, ORDER4, seed=0)
        with pytest.raises(DimensionMismatchError):
            model.predict(np.ones((3, 5)))


class TestImportances:
    def test_informative_feature_dominates(self):
        rng = np.random.default_rng(25)
        n = 300
        X = rng.standard_normal((n, 8))
        y = (X[:, 2] > 0).astype(int) + 2 * (X[:, 5] > 0).astype(int)
        model = train_random_forest(RF_CFG, X, y, ORDER4, seed=3)
        imp = model.feature_importances()
        assert imp.sum() == pytest.approx(1.0)
        assert np.all(imp >= 0)
        assert set(np.argsort(imp)[-2:]) == {2, 5}

    def test_importance_survives_serialization(self):
        from ossmm_kit.ml import model_from_dict, model_to_dict
        rng = np.random.default_rng(26)
        X, y = _blobs(rng)
        model = train_random_forest(RF_CFG, X, y, ORDER4, seed=4)
        again = model_from_dict(model_to_dict(model))
        np.testing.assert_array_equal(again.feature_importances(),
                                      model.feature_importances())


class TestGradientBoosting:
    def test_learns_blobs(self):
        rng = np.random.default_rng(30)
        X, y = _blobs(rng, n_per=50, spread=1.5)
        Xt, yt = _blobs(rng, n_per=30, spread=1.5)
        model = train_gradient_boosted_trees(GBT_CFG, X, y, ORDER4, seed=5)
        assert np.mean(model.predict(Xt) == yt) > 0.95

    def test_more_stages_fit_better(self):
        rng = np.random.default_rng(31)
        X, y = _blobs(rng, n_per=60, spread=3.5)
        few = ClassifierConfig("gradient_boosted_trees",
                               {"n_estimators": 1, "max_depth": 2,
                                "learning_rate": 0.2})
        many = ClassifierConfig("gradient_boosted_trees",
                                {"n_estimators": 40, "max_depth": 2,
                                 "learning_rate": 0.2})
        acc_few = np.mean(
            train_gradient_boosted_trees(few, X, y, ORDER4, 0).predict(X) == y)
        acc_many = np.mean(
            train_gradient_boosted_trees(many, X, y, ORDER4, 0).predict(X) == y)
        assert acc_many > acc_few

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(32)
        X, y = _blobs(rng, spread=2.0)
        a = train_gradient_boosted_trees(GBT_CFG, X, y, ORDER4, seed=9)
        b = train_gradient_boosted_trees(GBT_CFG, X, y, ORDER4, seed=9)
        Xq = rng.standard_normal((50, X.shape[1]))
        np.testing.assert_array_equal(a.predict(Xq), b.predict(Xq))
        np.testing.assert_allclose(a.decision_scores(Xq),
                                   b.decision_scores(Xq), atol=0)

    def test_stage_bookkeeping(self):
        rng = np.random.default_rng(33)
        X, y = _blobs(rng)
        model = train_gradient_boosted_trees(GBT_CFG, X, y, ORDER4, seed=1)
        assert len(model.stages) == 20
        assert all(len(stage) == 4 for stage in model.stages)
        assert model.training_meta["n_stage_trees"] == 80

    def test_column_subsample_restricts_trees(self):
        rng = np.random.default_rng(34)
        X, y = _blobs(rng, d=10)
        cfg = ClassifierConfig("gradient_boosted_trees",
                               {"n_estimators": 5, "max_depth": 3,
                                "learning_rate": 0.3, "colsample": 0.3})
        model = train_gradient_boosted_trees(cfg, X, y, ORDER4, seed=2)
        for stage in model.stages:
            for tree in stage:
                used = set(tree.feature[tree.feature != LEAF].tolist())
                assert len(used) <= 3          # round(0.3 * 10)

    def test_importances_normalized(self):
        rng = np.random.default_rng(35)
        X, y = _blobs(rng)
        model = train_gradient_boosted_trees(GBT_CFG, X, y, ORDER4, seed=3)
        imp = model.feature_importances()
        assert imp.sum() == pytest.approx(1.0)
        assert np.all(imp >= 0)
