"""Per-class scores shared by evaluation and streaming prediction.

Score sources: vote fraction for trees and forests, softmax probability for
boosting, raw one-vs-rest margin for the SVM. The single-row scorer matches
the batch path bit for bit.
"""
import numpy as np

from .ensembles import BoostedTreesClassifier, RandomForestClassifier, softmax
from .svm import LinearSVMClassifier, margins, standardize
from .tree import DecisionTreeClassifier


def batch_scores(model, X):
    """``(predicted_classes, scores)`` for a feature matrix."""
    if isinstance(model, (DecisionTreeClassifier, RandomForestClassifier)):
        scores = model.predict_proba(X)
        return model.classes_[np.argmax(scores, axis=1)], scores
    if isinstance(model, BoostedTreesClassifier):
        F = model.decision_function(X)
        return model.classes_[np.argmax(F, axis=1)], softmax(F)
    if isinstance(model, LinearSVMClassifier):
        M = model.decision_function(X)
        return model.classes_[np.argmax(M, axis=1)], M
    raise TypeError(f"unsupported model {type(model).__name__}")


def row_scorer(model):
    """Return ``f(x) -> (predicted_class, scores)`` for one feature vector."""
    classes = model.classes_
    K = len(classes)
    if isinstance(model, DecisionTreeClassifier):
        tree = model.tree_
        eye = np.eye(K)

        def score(x):
            pos = int(tree.predict_row(x))
            return classes[pos], eye[pos]

    elif isinstance(model, RandomForestClassifier):
        trees = model.trees_

        def score(x):
            votes = np.zeros(K, dtype=np.int64)
            for tree in trees:
                votes[int(tree.predict_row(x))] += 1
            return classes[int(np.argmax(votes))], votes / len(trees)

    elif isinstance(model, BoostedTreesClassifier):
        rounds, lr, base = model.rounds_, model.learning_rate, model.base_score_

        def score(x):
            F = base.copy()
            for trees in rounds:
                for c, tree in enumerate(trees):
                    F[c] += lr * tree.predict_row(x)
            F = F[None, :]
            return classes[int(np.argmax(F[0]))], softmax(F)[0]

    elif isinstance(model, LinearSVMClassifier):
        mean, scale, coef, intercept = model.mean_, model.scale_, model.coef_, model.intercept_

        def score(x):
            M = margins(standardize(x[None, :], mean, scale), coef, intercept)[0]
            return classes[int(np.argmax(M))], M

    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    return score
