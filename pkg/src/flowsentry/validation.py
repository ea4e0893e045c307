"""Input checks shared by the estimators."""
import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y


def check_training_data(X, y, min_samples=1):
    X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=min_samples)
    return X, y


def check_features(X, n_features=None):
    """2-D finite float array, optionally with a fixed column count."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=0)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, model expects {n_features}")
    return X


def check_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")


def derive_rng(*key):
    """Generator seeded from an integer key path such as (seed, tree, node)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))
