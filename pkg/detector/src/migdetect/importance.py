"""Feature attribution: impurity importances for forests, exact Shapley
values for anything with a prediction function.

With only three features the Shapley sum runs over all eight coalitions, so
the attribution is exact rather than sampled. Absent features are imputed
from a single background reference (the training median).
"""

from __future__ import annotations

from itertools import combinations
from math import factorial

import numpy as np


def gini_importance(model, feature_names) -> dict:
    """Normalized impurity-decrease importances of a fitted forest."""
    raw = np.asarray(model.feature_importances_, dtype=np.float64)
    total = raw.sum()
    values = raw / total if total > 0 else raw
    return {"supported": True, "method": "gini",
            "values": dict(zip(feature_names, values.tolist()))}


def exact_shapley(predict, X: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Exact Shapley attributions of ``predict`` over the rows of X.

    ``predict`` maps an (n, d) matrix to (n,) scores. Features outside a
    coalition are replaced by the background reference. Returns (n, d).
    """
    n, d = X.shape
    background = np.asarray(background, dtype=np.float64).reshape(1, d)
    features = tuple(range(d))

    coalition_scores = {}
    for size in range(d + 1):
        for subset in combinations(features, size):
            masked = np.repeat(background, n, axis=0)
            if subset:
                masked[:, subset] = X[:, subset]
            coalition_scores[subset] = np.asarray(predict(masked), dtype=np.float64)

    phi = np.zeros((n, d))
    for i in features:
        others = tuple(f for f in features if f != i)
        for size in range(d):
            weight = factorial(size) * factorial(d - size - 1) / factorial(d)
            for subset in combinations(others, size):
                with_i = tuple(sorted(subset + (i,)))
                phi[:, i] += weight * (coalition_scores[with_i]
                                       - coalition_scores[subset])
    return phi


def shapley_importance(predict, X: np.ndarray, background: np.ndarray,
                       feature_names, max_rows: int = 256, rng=None) -> dict:
    """Normalized mean |Shapley| per feature over (a sample of) X."""
    if len(X) > max_rows:
        if rng is None:
            rng = np.random.default_rng(0)
        X = X[rng.choice(len(X), size=max_rows, replace=False)]
    phi = exact_shapley(predict, X, background)
    mean_abs = np.abs(phi).mean(axis=0)
    total = mean_abs.sum()
    values = mean_abs / total if total > 0 else mean_abs
    return {"supported": True, "method": "exact-shapley",
            "values": dict(zip(feature_names, values.tolist()))}


def unsupported(reason: str) -> dict:
    return {"supported": False, "reason": reason}
