"""CART-style trees: Gini classification trees and second-order gradient trees.

Nodes are stored flat in pre-order. Samples go left when
``x[feature] <= threshold``. Thresholds are midpoints between consecutive
distinct values; ties between equally good splits go to the lowest feature
index, then the lowest threshold.
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .validation import check_fitted, check_features, check_training_data

LEAF = -1


class Tree:
    """Flat pre-order node arrays. ``feature == -1`` marks a leaf."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_nodes(self):
        return len(self.feature)

    def depth(self):
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X):
        """Leaf index reached by each row of X."""
        node = np.zeros(len(X), dtype=np.int64)
        active = np.arange(len(X))
        while len(active):
            f = self.feature[node[active]]
            internal = f != LEAF
            active, f = active[internal], f[internal]
            if not len(active):
                break
            cur = node[active]
            go_left = X[active, f] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def predict(self, X):
        return self.value[self.apply(X)]

    def predict_row(self, x):
        i = 0
        feature, threshold = self.feature, self.threshold
        while feature[i] != LEAF:
            i = self.left[i] if x[feature[i]] <= threshold[i] else self.right[i]
        return self.value[i]

    def __eq__(self, other):
        return isinstance(other, Tree) and all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("feature", "threshold", "left", "right", "value")
        )


def _midpoint(lo, hi):
    mid = (lo + hi) / 2.0
    # adjacent floats can round the midpoint up onto the right-hand value
    return lo if mid >= hi else mid


# candidates whose scores agree to this relative precision count as tied, so
# mathematically equal splits resolve by index rather than by rounding noise
_TIE_RTOL = 1e-12
_GAIN_ATOL = 1e-300


def _first_max(score):
    top = score.max()
    return int(np.flatnonzero(score >= top - _TIE_RTOL * abs(top))[0])


def best_gini_split(X, y_onehot, features):
    """Best (feature, threshold, impurity decrease) over the given features.

    Returns ``None`` if no feature has two distinct values.
    """
    n = len(X)
    totals = y_onehot.sum(axis=0)
    parent_term = float(totals @ totals) / (n * n)
    best = None
    best_score = -np.inf
    sizes_left = np.arange(1, n, dtype=np.float64)
    sizes_right = n - sizes_left
    for f in sorted(features):
        order = np.argsort(X[:, f], kind="stable")
        v = X[order, f]
        valid = v[:-1] < v[1:]
        if not valid.any():
            continue
        left = np.cumsum(y_onehot[order], axis=0)[:-1]
        right = totals - left
        score = (left * left).sum(axis=1) / sizes_left + (right * right).sum(axis=1) / sizes_right
        score = np.where(valid, score, -np.inf)
        i = _first_max(score)
        if best is None or score[i] > best_score + _TIE_RTOL * abs(best_score):
            best_score = score[i]
            best = (f, _midpoint(v[i], v[i + 1]), float(score[i]) / n - parent_term)
    return best


def best_gradient_split(X, g, h, reg_lambda, gamma, features):
    """Best (feature, threshold, gain) under the regularised second-order gain."""
    G, H = g.sum(), h.sum()
    parent = G * G / (H + reg_lambda)
    best = None
    best_gain = -np.inf
    for f in sorted(features):
        order = np.argsort(X[:, f], kind="stable")
        v = X[order, f]
        valid = v[:-1] < v[1:]
        if not valid.any():
            continue
        GL = np.cumsum(g[order])[:-1]
        HL = np.cumsum(h[order])[:-1]
        GR, HR = G - GL, H - HL
        gain = 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - parent) - gamma
        gain = np.where(valid, gain, -np.inf)
        i = _first_max(gain)
        if best is None or gain[i] > best_gain + _TIE_RTOL * max(abs(best_gain), _GAIN_ATOL):
            best_gain = gain[i]
            best = (f, _midpoint(v[i], v[i + 1]), float(gain[i]))
    return best


class _Builder:
    def __init__(self, max_depth, min_samples_split, candidates):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.candidates = candidates
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def _new(self):
        node = len(self.feature)
        for arr in (self.feature, self.left, self.right):
            arr.append(LEAF)
        self.threshold.append(0.0)
        self.value.append(0.0)
        return node

    def grow(self, X, idx, depth):
        node = self._new()
        split = None
        if (self.max_depth is None or depth < self.max_depth) and len(idx) >= self.min_samples_split:
            if not self.is_pure(idx):
                Xn = X[idx]
                split = self.find_split(Xn, idx, self.candidates(node, Xn))
        if split is None:
            self.value[node] = self.leaf_value(idx)
            return node
        f, thr = split
        mask = X[idx, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self.grow(X, idx[mask], depth + 1)
        self.right[node] = self.grow(X, idx[~mask], depth + 1)
        return node

    def build(self, X):
        self.grow(X, np.arange(len(X)), 0)
        return Tree(self.feature, self.threshold, self.left, self.right, self.value)


class _GiniBuilder(_Builder):
    def __init__(self, y, n_classes, min_impurity_decrease, **kw):
        super().__init__(**kw)
        self.y = y
        self.onehot = np.eye(n_classes, dtype=np.float64)[y]
        self.n_classes = n_classes
        self.min_impurity_decrease = min_impurity_decrease

    def is_pure(self, idx):
        return bool((self.y[idx] == self.y[idx[0]]).all())

    def find_split(self, Xn, idx, features):
        best = best_gini_split(Xn, self.onehot[idx], features)
        if best is None:
            return None
        f, thr, decrease = best
        if decrease < self.min_impurity_decrease:
            return None
        if not self._strictly_improves(idx, Xn[:, f] <= thr) and self.min_impurity_decrease > 0:
            return None
        # with no decrease threshold an impure node still splits when the best
        # candidate only ties its parent (XOR-like layouts); children shrink, so
        # growth terminates
        return f, thr

    def _strictly_improves(self, idx, mask):
        # exact integer test; float rounding can fake a tiny gain for a vacuous split
        left = np.bincount(self.y[idx][mask], minlength=self.n_classes).tolist()
        right = np.bincount(self.y[idx][~mask], minlength=self.n_classes).tolist()
        nl, nr = sum(left), sum(right)
        n = nl + nr
        sl = sum(c * c for c in left)
        sr = sum(c * c for c in right)
        st = sum((a + b) ** 2 for a, b in zip(left, right))
        return n * nr * sl + n * nl * sr - nl * nr * st > 0

    def leaf_value(self, idx):
        # argmax returns the lowest class index on ties
        return float(np.argmax(np.bincount(self.y[idx], minlength=self.n_classes)))


class _GradientBuilder(_Builder):
    def __init__(self, g, h, reg_lambda, gamma, **kw):
        super().__init__(**kw)
        self.g, self.h = g, h
        self.reg_lambda, self.gamma = reg_lambda, gamma

    def is_pure(self, idx):
        return False

    def find_split(self, Xn, idx, features):
        best = best_gradient_split(Xn, self.g[idx], self.h[idx], self.reg_lambda, self.gamma, features)
        if best is None or best[2] <= 0:
            return None
        return best[0], best[1]

    def leaf_value(self, idx):
        return leaf_weight(self.g[idx].sum(), self.h[idx].sum(), self.reg_lambda)


def leaf_weight(G, H, reg_lambda):
    """Newton step for a leaf: -G / (H + lambda)."""
    return -G / (H + reg_lambda)


def _all_features(d):
    features = list(range(d))
    return lambda node, Xn: features


def grow_gini_tree(
    X, y, n_classes, max_depth=20, min_samples_split=2, min_impurity_decrease=0.0, candidates=None
):
    """Greedy Gini tree on integer class positions ``y`` in ``[0, n_classes)``."""
    if len(X) == 0:
        raise ValueError("cannot grow a tree on an empty dataset")
    builder = _GiniBuilder(
        y,
        n_classes,
        min_impurity_decrease,
        max_depth=max_depth,
        min_samples_split=min_samples_split,
        candidates=candidates or _all_features(X.shape[1]),
    )
    return builder.build(X)


def grow_gradient_tree(X, g, h, reg_lambda=1.0, gamma=0.0, max_depth=6, min_samples_split=2):
    """Regression tree fitted to per-row gradients and hessians.

    With unit hessians, ``reg_lambda=0`` and ``g = -target`` this is a plain
    variance-reduction tree whose leaves hold the mean target.
    """
    if len(X) == 0:
        raise ValueError("cannot grow a tree on an empty dataset")
    builder = _GradientBuilder(
        np.asarray(g, dtype=np.float64),
        np.asarray(h, dtype=np.float64),
        reg_lambda,
        gamma,
        max_depth=max_depth,
        min_samples_split=min_samples_split,
        candidates=_all_features(X.shape[1]),
    )
    return builder.build(X)


class DecisionTreeClassifier(ClassifierMixin, BaseEstimator):
    """Deterministic CART classifier (Gini, no pruning).

    Parameters
    ----------
    max_depth : int or None, default 20
    min_samples_split : int, default 2
    min_impurity_decrease : float, default 0.0
        A split must decrease impurity by at least this much. When 0, the
        best split is taken even if it only ties the parent impurity, so an
        unrestricted tree separates any conflict-free training set.
    """

    def __init__(self, max_depth=20, min_samples_split=2, min_impurity_decrease=0.0):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.min_impurity_decrease = min_impurity_decrease

    def fit(self, X, y):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        X, y = check_training_data(X, y)
        self.classes_, y_pos = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        self.tree_ = grow_gini_tree(
            X,
            y_pos,
            len(self.classes_),
            self.max_depth,
            self.min_samples_split,
            self.min_impurity_decrease,
        )
        return self

    def predict(self, X):
        check_fitted(self, "tree_")
        X = check_features(X, self.n_features_in_)
        return self.classes_[self.tree_.predict(X).astype(np.int64)]

    def predict_proba(self, X):
        check_fitted(self, "tree_")
        X = check_features(X, self.n_features_in_)
        pos = self.tree_.predict(X).astype(np.int64)
        return np.eye(len(self.classes_))[pos]
