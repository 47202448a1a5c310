"""Regression trees and ensembles over mixed numeric/categorical features.

Squared-error CART with category-set splits: at each node the categories of a
categorical feature are ordered by their mean target and scanned like a
numeric feature, so a split is a set of category codes rather than a code
threshold.  Leaf values are the mean target of the rows routed to the leaf.
All randomness (bootstrap, row/feature subsampling) flows from a single seed.
"""

from __future__ import annotations

import numpy as np

_MIN_GAIN = 1e-12


class _Node:
    __slots__ = ("feature", "threshold", "left_cats", "left", "right", "value", "n")

    def __init__(self):
        self.feature = None
        self.threshold = None
        self.left_cats = None
        self.left = None
        self.right = None
        self.value = 0.0
        self.n = 0

    @property
    def is_leaf(self):
        return self.feature is None


class RegressionTree:
    """Single CART regressor; deterministic unless ``feature_fraction`` < 1."""

    def __init__(
        self,
        max_depth: int = 6,
        min_samples_leaf: int = 1,
        min_samples_split: int = 2,
        feature_fraction: float = 1.0,
        rng: np.random.Generator | None = None,
    ):
        self.max_depth = max_depth
        self.min_samples_leaf = max(1, min_samples_leaf)
        self.min_samples_split = max(2, min_samples_split)
        self.feature_fraction = feature_fraction
        self.rng = rng
        self.root_: _Node | None = None
        self.n_features_: int | None = None

    def fit(self, X: np.ndarray, y: np.ndarray, categorical: np.ndarray) -> "RegressionTree":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
            raise ValueError("fit requires a non-empty 2-D X aligned with y")
        self.n_features_ = X.shape[1]
        self._categorical = np.asarray(categorical, dtype=bool)
        if self._categorical.shape != (self.n_features_,):
            raise ValueError("categorical mask must have one flag per feature")
        self.root_ = self._grow(X, y, np.arange(len(y)), depth=0)
        return self

    def _candidate_features(self) -> np.ndarray:
        n = self.n_features_
        if self.feature_fraction >= 1.0 or self.rng is None:
            return np.arange(n)
        k = max(1, int(round(self.feature_fraction * n)))
        return np.sort(self.rng.choice(n, size=k, replace=False))

    def _grow(self, X, y, idx, depth) -> _Node:
        node = _Node()
        y_node = y[idx]
        node.n = len(idx)
        node.value = float(y_node.mean())
        if depth >= self.max_depth or node.n < self.min_samples_split:
            return node
        sse_node = float(np.sum(y_node * y_node) - node.n * node.value * node.value)
        if sse_node <= _MIN_GAIN:
            return node
        best_gain = _MIN_GAIN
        best = None  # (feature, threshold, left_cats, left_mask)
        for f in self._candidate_features():
            vals = X[idx, f]
            if self._categorical[f]:
                found = self._scan_categorical(vals, y_node, sse_node)
            else:
                found = self._scan_numeric(vals, y_node, sse_node)
            if found is not None and found[0] > best_gain:
                best_gain, threshold, left_cats, left_mask = found
                best = (f, threshold, left_cats, left_mask)
        if best is None:
            return node
        node.feature, node.threshold, node.left_cats, left_mask = best
        node.left = self._grow(X, y, idx[left_mask], depth + 1)
        node.right = self._grow(X, y, idx[~left_mask], depth + 1)
        return node

    def _scan_numeric(self, vals, y_node, sse_node):
        n = len(vals)
        order = np.argsort(vals)
        sv = vals[order]
        sy = y_node[order]
        c1 = np.cumsum(sy)
        c2 = np.cumsum(sy * sy)
        nl = np.arange(1, n)
        valid = sv[:-1] != sv[1:]
        valid &= (nl >= self.min_samples_leaf) & (n - nl >= self.min_samples_leaf)
        if not valid.any():
            return None
        sse_l = c2[:-1] - c1[:-1] ** 2 / nl
        sse_r = (c2[-1] - c2[:-1]) - (c1[-1] - c1[:-1]) ** 2 / (n - nl)
        gain = np.where(valid, sse_node - sse_l - sse_r, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] <= _MIN_GAIN:
            return None
        threshold = (sv[i] + sv[i + 1]) / 2.0
        left_mask = vals <= threshold
        return float(gain[i]), threshold, None, left_mask

    def _scan_categorical(self, vals, y_node, sse_node):
        cats, inv = np.unique(vals, return_inverse=True)
        k = len(cats)
        if k < 2:
            return None
        cnt = np.bincount(inv)
        s1 = np.bincount(inv, weights=y_node)
        s2 = np.bincount(inv, weights=y_node * y_node)
        order = np.lexsort((cats, s1 / cnt))  # by mean target, ties by code
        c1 = np.cumsum(s1[order])
        c2 = np.cumsum(s2[order])
        nl = np.cumsum(cnt[order])[:-1]
        n = len(vals)
        valid = (nl >= self.min_samples_leaf) & (n - nl >= self.min_samples_leaf)
        if not valid.any():
            return None
        sse_l = c2[:-1] - c1[:-1] ** 2 / nl
        sse_r = (c2[-1] - c2[:-1]) - (c1[-1] - c1[:-1]) ** 2 / (n - nl)
        gain = np.where(valid, sse_node - sse_l - sse_r, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] <= _MIN_GAIN:
            return None
        left_cats = np.sort(cats[order[: i + 1]])
        left_mask = np.isin(vals, left_cats)
        return float(gain[i]), None, left_cats, left_mask

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(len(X))
        self._predict_into(self.root_, X, np.arange(len(X)), out)
        return out

    def _predict_into(self, node, X, idx, out):
        if node.is_leaf or len(idx) == 0:
            out[idx] = node.value
            return
        vals = X[idx, node.feature]
        if node.left_cats is not None:
            go_left = np.isin(vals, node.left_cats)  # unseen categories go right
        else:
            go_left = vals <= node.threshold
        self._predict_into(node.left, X, idx[go_left], out)
        self._predict_into(node.right, X, idx[~go_left], out)

    def split_counts(self) -> np.ndarray:
        """Number of internal-node splits per feature (the importance measure)."""
        counts = np.zeros(self.n_features_, dtype=np.int64)
        stack = [self.root_]
        while stack:
            node = stack.pop()
            if node is None or node.is_leaf:
                continue
            counts[node.feature] += 1
            stack.append(node.left)
            stack.append(node.right)
        return counts

    def leaves(self):
        """Yield (leaf, row_count) pairs; used by invariant tests."""
        stack = [self.root_]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
            else:
                stack.append(node.left)
                stack.append(node.right)

    def to_dict(self) -> dict:
        return {"n_features": self.n_features_, "root": _node_to_dict(self.root_)}

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionTree":
        tree = cls()
        tree.n_features_ = data["n_features"]
        tree.root_ = _node_from_dict(data["root"])
        return tree


def _node_to_dict(node: _Node) -> dict:
    if node.is_leaf:
        return {"value": node.value, "n": node.n}
    out = {
        "feature": int(node.feature),
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
        "value": node.value,
        "n": node.n,
    }
    if node.left_cats is not None:
        out["left_cats"] = [float(c) for c in node.left_cats]
    else:
        out["threshold"] = float(node.threshold)
    return out


def _node_from_dict(data: dict) -> _Node:
    node = _Node()
    node.value = data["value"]
    node.n = data["n"]
    if "feature" in data:
        node.feature = data["feature"]
        if "left_cats" in data:
            node.left_cats = np.array(data["left_cats"], dtype=float)
        else:
            node.threshold = data["threshold"]
        node.left = _node_from_dict(data["left"])
        node.right = _node_from_dict(data["right"])
    return node


class RandomForestRegressor:
    """Bagged trees: bootstrap rows (size n, with replacement) + per-node features."""

    def __init__(
        self,
        n_estimators: int = 100,
        max_depth: int = 6,
        min_samples_leaf: int = 1,
        feature_fraction: float = 1.0,
        bootstrap: bool = True,
        seed: int = 0,
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.feature_fraction = feature_fraction
        self.bootstrap = bootstrap
        self.seed = seed
        self.trees_: list[RegressionTree] = []

    def fit(self, X, y, categorical) -> "RandomForestRegressor":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n = len(y)
        self.trees_ = []
        for child in np.random.SeedSequence(self.seed).spawn(self.n_estimators):
            rng = np.random.default_rng(child)
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            tree = RegressionTree(
                max_depth=self.max_depth,
                min_samples_leaf=self.min_samples_leaf,
                feature_fraction=self.feature_fraction,
                rng=rng,
            )
            tree.fit(X[rows], y[rows], categorical)
            self.trees_.append(tree)
        return self

    def predict(self, X) -> np.ndarray:
        if not self.trees_:
            raise ValueError("forest is not fitted")
        acc = np.zeros(len(X))
        for tree in self.trees_:
            acc += tree.predict(X)
        return acc / len(self.trees_)

    def split_counts(self) -> np.ndarray:
        return np.sum([t.split_counts() for t in self.trees_], axis=0)


class GradientBoostingRegressor:
    """Stagewise squared-error boosting; base score is the training mean.

    Each stage fits a tree to the residuals and adds ``learning_rate`` times
    its prediction.  Training loss is non-increasing per stage when
    ``subsample_fraction`` is 1.0.
    """

    def __init__(
        self,
        n_estimators: int = 100,
        learning_rate: float = 0.1,
        max_depth: int = 6,
        min_samples_leaf: int = 1,
        subsample_fraction: float = 1.0,
        feature_fraction: float = 1.0,
        seed: int = 0,
    ):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.subsample_fraction = subsample_fraction
        self.feature_fraction = feature_fraction
        self.seed = seed
        self.base_score_: float = 0.0
        self.trees_: list[RegressionTree] = []

    def fit(self, X, y, categorical) -> "GradientBoostingRegressor":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n = len(y)
        if n == 0:
            raise ValueError("fit requires at least one row")
        self.base_score_ = float(y.mean())
        self.trees_ = []
        rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        pred = np.full(n, self.base_score_)
        for _ in range(self.n_estimators):
            residual = y - pred
            if self.subsample_fraction < 1.0:
                k = max(1, int(round(self.subsample_fraction * n)))
                rows = rng.permutation(n)[:k]
            else:
                rows = np.arange(n)
            tree = RegressionTree(
                max_depth=self.max_depth,
                min_samples_leaf=self.min_samples_leaf,
                feature_fraction=self.feature_fraction,
                rng=rng,
            )
            tree.fit(X[rows], residual[rows], categorical)
            self.trees_.append(tree)
            if self.learning_rate != 0.0:
                pred += self.learning_rate * tree.predict(X)
        return self

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        pred = np.full(len(X), self.base_score_)
        for tree in self.trees_:
            pred += self.learning_rate * tree.predict(X)
        return pred

    def staged_predict(self, X):
        """Yield predictions after each boosting stage (after stage 0 = base)."""
        X = np.asarray(X, dtype=float)
        pred = np.full(len(X), self.base_score_)
        yield pred.copy()
        for tree in self.trees_:
            pred += self.learning_rate * tree.predict(X)
            yield pred.copy()

    def split_counts(self) -> np.ndarray:
        return np.sum([t.split_counts() for t in self.trees_], axis=0)
