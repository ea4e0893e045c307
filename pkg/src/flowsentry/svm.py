"""One-vs-rest linear SVM trained by Pegasos-style hinge-loss subgradient steps."""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .validation import check_features, check_fitted, check_training_data, derive_rng


def standardize(X, mean, scale):
    """(X - mean) / scale, with zero-variance columns mapped to exactly 0."""
    safe = np.where(scale > 0, scale, 1.0)
    return np.where(scale > 0, (X - mean) / safe, 0.0)


def hinge_objective(W, Xa, Y, alpha):
    """Per-class regularised objective alpha/2 |w|^2 + mean hinge loss.

    ``Xa`` carries the constant bias column, ``Y`` is (n_samples, n_classes) in {-1, +1}.
    """
    m = Xa @ W.T
    hinge = np.maximum(0.0, 1.0 - Y * m).mean(axis=0)
    return 0.5 * alpha * (W * W).sum(axis=1) + hinge


def margins(Z, coef, intercept):
    """Row-wise ``Z @ coef.T + intercept`` with a fixed per-row summation order.

    A BLAS matmul may sum differently for one row than for many; this keeps
    streamed single-row scores bit-identical to batch scores.
    """
    Z = np.atleast_2d(Z)
    return (Z[:, None, :] * coef[None, :, :]).sum(axis=2) + intercept


class LinearSVMClassifier(ClassifierMixin, BaseEstimator):
    """Linear one-vs-rest SVM on standardised features.

    Each binary problem minimises ``alpha/2 |w|^2 + mean hinge loss`` with
    per-sample subgradient steps of size ``1 / (alpha * t)``, projected onto
    the ball of radius ``1 / sqrt(alpha)`` that contains the optimum. The
    returned weights average the iterates of the final epoch. The bias is the
    weight on a constant input column and is regularised with the rest.

    Convergence needs ``alpha * epochs * n_samples`` well above 1; on tiny
    training sets with the default ``alpha`` the weights are still usable for
    ranking but far from the optimum.
    """

    def __init__(self, alpha=1e-4, epochs=20, seed=0):
        self.alpha = alpha
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        X, y = check_training_data(X, y, min_samples=2)
        self.classes_, y_pos = np.unique(y, return_inverse=True)
        K = len(self.classes_)
        if K < 2:
            raise ValueError("SVM training needs at least two classes")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        Xa = self._augment(X)
        Y = np.where(y_pos[:, None] == np.arange(K)[None, :], 1.0, -1.0)

        n, d = Xa.shape
        W = np.zeros((K, d))
        W_sum = np.zeros((K, d))
        alpha = self.alpha
        radius = 1.0 / np.sqrt(alpha)
        t = 0
        for epoch in range(self.epochs):
            last = epoch == self.epochs - 1
            for i in derive_rng(self.seed, epoch).permutation(n):
                t += 1
                x = Xa[i]
                yi = Y[i]
                violated = yi * (W @ x) < 1.0
                W *= 1.0 - 1.0 / t
                if violated.any():
                    W[violated] += (yi[violated] / (alpha * t))[:, None] * x
                    norms = np.sqrt((W * W).sum(axis=1))
                    over = norms > radius
                    if over.any():
                        W[over] *= (radius / norms[over])[:, None]
                if last:
                    W_sum += W
        W_avg = W_sum / n if self.epochs else W
        self.coef_ = W_avg[:, :-1].copy()
        self.intercept_ = W_avg[:, -1].copy()
        return self

    def _augment(self, X):
        Z = standardize(X, self.mean_, self.scale_)
        return np.hstack([Z, np.ones((len(Z), 1))])

    def decision_function(self, X):
        """Raw one-vs-rest margins, shape (n_samples, n_classes)."""
        check_fitted(self, "coef_")
        X = check_features(X, self.n_features_in_)
        Z = standardize(X, self.mean_, self.scale_)
        return margins(Z, self.coef_, self.intercept_)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def objective(self, X, y):
        """Per-class training objective of the fitted weights."""
        check_fitted(self, "coef_")
        X = check_features(X, self.n_features_in_)
        Xa = self._augment(X)
        Y = np.where(np.asarray(y)[:, None] == self.classes_[None, :], 1.0, -1.0)
        W = np.hstack([self.coef_, self.intercept_[:, None]])
        return hinge_objective(W, Xa, Y, self.alpha)
