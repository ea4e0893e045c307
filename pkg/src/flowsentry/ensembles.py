"""Random forest and softmax gradient-boosted trees built on ``tree``."""
import math

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin

from .tree import grow_gini_tree, grow_gradient_tree
from .validation import check_features, check_fitted, check_training_data, derive_rng


def _fit_forest_tree(X, y, n_classes, seed, t, bootstrap, mtry, max_depth, min_samples_split):
    n, d = X.shape
    if bootstrap:
        idx = derive_rng(seed, t).integers(0, n, size=n)
        X, y = X[idx], y[idx]

    def candidates(node, Xn):
        order = derive_rng(seed, t, node).permutation(d)
        varying = Xn.min(axis=0) < Xn.max(axis=0)
        return [int(f) for f in order if varying[f]][:mtry]

    return grow_gini_tree(
        X, y, n_classes, max_depth, min_samples_split, candidates=candidates
    )


class RandomForestClassifier(ClassifierMixin, BaseEstimator):
    """Bagged Gini trees with per-node feature subsampling and majority vote.

    Every tree draws its bootstrap sample from ``(seed, tree_index)`` and its
    per-node feature subsets from ``(seed, tree_index, node_index)``, so the
    fitted model does not depend on ``n_jobs``.

    ``mtry=None`` means ``floor(sqrt(n_features))``. Only features that vary
    within a node count toward its subset.
    """

    def __init__(
        self,
        n_trees=100,
        mtry=None,
        max_depth=20,
        min_samples_split=2,
        bootstrap=True,
        seed=0,
        n_jobs=1,
    ):
        self.n_trees = n_trees
        self.mtry = mtry
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.bootstrap = bootstrap
        self.seed = seed
        self.n_jobs = n_jobs

    def _resolved_mtry(self, d):
        mtry = self.mtry if self.mtry is not None else math.isqrt(d)
        if not 1 <= mtry <= d:
            raise ValueError(f"mtry must lie in [1, {d}], got {mtry}")
        return mtry

    def fit(self, X, y):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        X, y = check_training_data(X, y)
        self.classes_, y_pos = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        mtry = self._resolved_mtry(X.shape[1])
        self.trees_ = Parallel(n_jobs=self.n_jobs)(
            delayed(_fit_forest_tree)(
                X,
                y_pos,
                len(self.classes_),
                self.seed,
                t,
                self.bootstrap,
                mtry,
                self.max_depth,
                self.min_samples_split,
            )
            for t in range(self.n_trees)
        )
        return self

    def votes(self, X):
        """Per-class vote counts, shape (n_samples, n_classes)."""
        check_fitted(self, "trees_")
        X = check_features(X, self.n_features_in_)
        counts = np.zeros((len(X), len(self.classes_)), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees_:
            counts[rows, tree.predict(X).astype(np.int64)] += 1
        return counts

    def predict_proba(self, X):
        return self.votes(X) / len(self.trees_)

    def predict(self, X):
        return self.classes_[np.argmax(self.votes(X), axis=1)]


def softmax(F):
    Z = F - F.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def log_loss(F, y_pos):
    """Mean multiclass log-loss of raw scores ``F`` against class positions."""
    Z = F - F.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(Z).sum(axis=1))
    return float(np.mean(log_norm - Z[np.arange(len(F)), y_pos]))


def softmax_grad_hess(F, y_pos):
    P = softmax(F)
    Y = np.zeros_like(P)
    Y[np.arange(len(F)), y_pos] = 1.0
    return P - Y, P * (1.0 - P)


class BoostedTreesClassifier(ClassifierMixin, BaseEstimator):
    """Multiclass softmax boosting with second-order regression trees.

    Each round fits one tree per class to the softmax gradients and hessians
    and adds ``learning_rate`` times its output to that class score. Split
    gain and leaf weights use the L2 penalty ``reg_lambda`` and split penalty
    ``gamma``. ``train_loss_`` holds the training log-loss after every round.
    """

    def __init__(
        self,
        n_rounds=100,
        learning_rate=0.1,
        max_depth=6,
        reg_lambda=1.0,
        gamma=0.0,
        min_samples_split=2,
        seed=0,
        n_jobs=1,
    ):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_samples_split = min_samples_split
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        X, y = check_training_data(X, y)
        self.classes_, y_pos = np.unique(y, return_inverse=True)
        K = len(self.classes_)
        if K < 2:
            raise ValueError("boosting needs at least two classes; log-loss is degenerate otherwise")
        self.n_features_in_ = X.shape[1]
        self.base_score_ = np.zeros(K)
        F = np.tile(self.base_score_, (len(X), 1))
        self.rounds_ = []
        self.train_loss_ = []
        with Parallel(n_jobs=self.n_jobs) as pool:
            for _ in range(self.n_rounds):
                G, H = softmax_grad_hess(F, y_pos)
                trees = pool(
                    delayed(grow_gradient_tree)(
                        X,
                        G[:, c],
                        H[:, c],
                        self.reg_lambda,
                        self.gamma,
                        self.max_depth,
                        self.min_samples_split,
                    )
                    for c in range(K)
                )
                for c, tree in enumerate(trees):
                    F[:, c] += self.learning_rate * tree.predict(X)
                self.rounds_.append(trees)
                self.train_loss_.append(log_loss(F, y_pos))
        return self

    def decision_function(self, X):
        """Accumulated raw class scores, shape (n_samples, n_classes)."""
        check_fitted(self, "rounds_")
        X = check_features(X, self.n_features_in_)
        F = np.tile(self.base_score_, (len(X), 1))
        for trees in self.rounds_:
            for c, tree in enumerate(trees):
                F[:, c] += self.learning_rate * tree.predict(X)
        return F

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
