import itertools

import numpy as np
import pytest

from bss_twin.trees import GradientBoostingRegressor, RandomForestRegressor, RegressionTree


def make_regression(n=200, n_features=4, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    X = np.column_stack(
        [
            rng.integers(0, 6, n).astype(float),  # categorical codes
            rng.uniform(-2, 2, n),
            rng.uniform(0, 10, n),
            rng.integers(0, 3, n).astype(float),  # categorical codes
        ]
    )[:, :n_features]
    y = np.sin(X[:, 1]) + 0.5 * (X[:, 0] % 2) + 0.1 * X[:, 2] + rng.normal(0, noise, n)
    cat = np.array([True, False, False, True])[:n_features]
    return X, y, cat


def sse(y):
    return float(((y - y.mean()) ** 2).sum()) if len(y) else 0.0


class TestCart:
    def test_depth_zero_predicts_global_mean(self):
        X, y, cat = make_regression()
        tree = RegressionTree(max_depth=0).fit(X, y, cat)
        assert np.allclose(tree.predict(X), y.mean())

    def test_depth_zero_balanced_targets_predicts_zero(self):
        X = np.arange(10, dtype=float).reshape(-1, 1)
        y = np.array([-1.0, 1.0] * 5)
        tree = RegressionTree(max_depth=0).fit(X, y, np.array([False]))
        assert np.all(tree.predict(X) == 0.0)

    def test_leaf_value_is_mean_of_routed_rows(self):
        X, y, cat = make_regression(n=300, seed=3)
        tree = RegressionTree(max_depth=5, min_samples_leaf=3).fit(X, y, cat)
        # re-route every training row and group by leaf
        leaf_rows = {}
        for i in range(len(X)):
            node = tree.root_
            while not node.is_leaf:
                v = X[i, node.feature]
                if node.left_cats is not None:
                    node = node.left if v in node.left_cats else node.right
                else:
                    node = node.left if v <= node.threshold else node.right
            leaf_rows.setdefault(id(node), ([], node))[0].append(i)
        for rows, node in leaf_rows.values():
            assert node.n == len(rows)
            assert node.value == pytest.approx(y[rows].mean(), rel=1e-12)

    def test_numeric_root_split_matches_brute_force(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(0, 1, 60)
        y = np.where(x > 0.6, 2.0, -1.0) + rng.normal(0, 0.05, 60)
        X = x.reshape(-1, 1)
        tree = RegressionTree(max_depth=1).fit(X, y, np.array([False]))
        root = tree.root_
        # exhaustive scan over all midpoints
        best = 0.0
        xs = np.sort(np.unique(x))
        for lo, hi in zip(xs[:-1], xs[1:]):
            mask = x <= (lo + hi) / 2
            best = max(best, sse(y) - sse(y[mask]) - sse(y[~mask]))
        mask = x <= root.threshold
        achieved = sse(y) - sse(y[mask]) - sse(y[~mask])
        assert achieved == pytest.approx(best, rel=1e-9)

    def test_categorical_split_matches_subset_brute_force(self):
        # interleaved category means force a set split no single threshold can make
        rng = np.random.default_rng(7)
        codes = rng.integers(0, 4, 120).astype(float)
        means = {0.0: 1.0, 1.0: -1.0, 2.0: 1.1, 3.0: -0.9}
        y = np.array([means[c] for c in codes]) + rng.normal(0, 0.01, 120)
        X = codes.reshape(-1, 1)
        tree = RegressionTree(max_depth=1).fit(X, y, np.array([True]))
        root = tree.root_
        assert root.left_cats is not None
        mask = np.isin(codes, root.left_cats)
        achieved = sse(y) - sse(y[mask]) - sse(y[~mask])
        best = 0.0
        for r in range(1, 4):
            for subset in itertools.combinations([0.0, 1.0, 2.0, 3.0], r):
                m = np.isin(codes, subset)
                if m.any() and not m.all():
                    best = max(best, sse(y) - sse(y[m]) - sse(y[~m]))
        assert achieved == pytest.approx(best, rel=1e-9)
        # the chosen set groups the similar-mean categories together
        assert set(root.left_cats) in ({1.0, 3.0}, {0.0, 2.0})

    def test_min_samples_leaf_respected(self):
        X, y, cat = make_regression(n=100, seed=5)
        tree = RegressionTree(max_depth=8, min_samples_leaf=10).fit(X, y, cat)
        assert all(leaf.n >= 10 for leaf in tree.leaves())

    def test_serialization_round_trip(self):
        X, y, cat = make_regression(n=150, seed=9)
        tree = RegressionTree(max_depth=4).fit(X, y, cat)
        clone = RegressionTree.from_dict(tree.to_dict())
        assert np.array_equal(tree.predict(X), clone.predict(X))


class TestRandomForest:
    def test_single_tree_no_bootstrap_equals_cart(self):
        X, y, cat = make_regression(n=260, seed=1)
        X_train, y_train = X[:200], y[:200]
        X_test = X[200:]
        forest = RandomForestRegressor(
            n_estimators=1, max_depth=5, feature_fraction=1.0, bootstrap=False, seed=3
        ).fit(X_train, y_train, cat)
        cart = RegressionTree(max_depth=5).fit(X_train, y_train, cat)
        assert np.array_equal(forest.predict(X_test), cart.predict(X_test))

    def test_prediction_is_mean_of_trees(self):
        X, y, cat = make_regression(n=150, seed=2)
        forest = RandomForestRegressor(n_estimators=7, max_depth=3, feature_fraction=0.5, seed=11)
        forest.fit(X, y, cat)
        stacked = np.mean([t.predict(X) for t in forest.trees_], axis=0)
        assert np.allclose(forest.predict(X), stacked, atol=1e-12)

    def test_seeded_determinism(self):
        X, y, cat = make_regression(n=120, seed=4)
        a = RandomForestRegressor(n_estimators=5, max_depth=4, feature_fraction=0.75, seed=8).fit(X, y, cat)
        b = RandomForestRegressor(n_estimators=5, max_depth=4, feature_fraction=0.75, seed=8).fit(X, y, cat)
        assert np.array_equal(a.predict(X), b.predict(X))


class TestGradientBoosting:
    def test_zero_estimators_is_training_mean(self):
        X, y, cat = make_regression()
        model = GradientBoostingRegressor(n_estimators=0).fit(X, y, cat)
        assert np.allclose(model.predict(X), y.mean())

    def test_zero_learning_rate_is_training_mean(self):
        X, y, cat = make_regression()
        model = GradientBoostingRegressor(n_estimators=10, learning_rate=0.0).fit(X, y, cat)
        assert np.allclose(model.predict(X), y.mean())

    def test_training_loss_non_increasing(self):
        X, y, cat = make_regression(n=250, seed=6)
        model = GradientBoostingRegressor(
            n_estimators=50, learning_rate=0.1, max_depth=3, subsample_fraction=1.0
        ).fit(X, y, cat)
        losses = [float(np.mean((y - pred) ** 2)) for pred in model.staged_predict(X)]
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-12)

    def test_fits_signal(self):
        X, y, cat = make_regression(n=500, seed=12, noise=0.05)
        model = GradientBoostingRegressor(n_estimators=80, learning_rate=0.2, max_depth=4).fit(X, y, cat)
        assert np.mean((y - model.predict(X)) ** 2) < 0.05

    def test_seeded_determinism_with_subsampling(self):
        X, y, cat = make_regression(n=200, seed=13)
        kwargs = dict(n_estimators=15, max_depth=3, subsample_fraction=0.8, feature_fraction=0.8, seed=5)
        a = GradientBoostingRegressor(**kwargs).fit(X, y, cat)
        b = GradientBoostingRegressor(**kwargs).fit(X, y, cat)
        assert np.array_equal(a.predict(X), b.predict(X))


class TestSplitCounts:
    def test_single_split_tree(self):
        rng = np.random.default_rng(1)
        X = np.column_stack([rng.uniform(0, 1, 50), rng.uniform(0, 1, 50)])
        y = np.where(X[:, 1] > 0.5, 1.0, 0.0)
        tree = RegressionTree(max_depth=1).fit(X, y, np.array([False, False]))
        counts = tree.split_counts()
        assert counts[1] == 1 and counts[0] == 0

    def test_forest_counts_sum_over_trees(self):
        X, y, cat = make_regression(n=100, seed=14)
        forest = RandomForestRegressor(n_estimators=3, max_depth=2, seed=1).fit(X, y, cat)
        total = forest.split_counts()
        assert np.array_equal(total, np.sum([t.split_counts() for t in forest.trees_], axis=0))
