"""Attribution checks: exact Shapley against the closed form for linear models."""

import numpy as np
import pytest
from sklearn.ensemble import RandomForestClassifier

from migdetect.importance import exact_shapley, gini_importance, shapley_importance


def test_shapley_matches_linear_closed_form():
    # for f(x) = w.x + b the Shapley value of feature i is w_i (x_i - bg_i)
    rng = np.random.default_rng(1)
    w = np.array([0.5, -2.0, 3.25])
    X = rng.normal(size=(64, 3))
    background = rng.normal(size=3)

    def predict(M):
        return M @ w + 7.0

    phi = exact_shapley(predict, X, background)
    expected = w * (X - background)
    assert np.allclose(phi, expected, atol=1e-12)


def test_shapley_efficiency_property():
    # attributions sum to f(x) - f(background), even for nonlinear predictors
    rng = np.random.default_rng(2)
    X = rng.normal(size=(32, 3))
    background = np.zeros(3)

    def predict(M):
        return np.sin(M[:, 0]) + M[:, 1] * M[:, 2]

    phi = exact_shapley(predict, X, background)
    gap = predict(X) - predict(background.reshape(1, 3))
    assert np.allclose(phi.sum(axis=1), gap, atol=1e-10)


def test_shapley_importance_normalizes_and_subsamples_deterministically():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(1000, 3))

    def predict(M):
        return M[:, 2]

    out_a = shapley_importance(predict, X, np.zeros(3), ("a", "b", "c"),
                               max_rows=100, rng=np.random.default_rng(9))
    out_b = shapley_importance(predict, X, np.zeros(3), ("a", "b", "c"),
                               max_rows=100, rng=np.random.default_rng(9))
    assert out_a == out_b
    assert sum(out_a["values"].values()) == pytest.approx(1.0)
    assert out_a["values"]["c"] == pytest.approx(1.0)


def test_gini_importance_near_zero_for_constant_features():
    rng = np.random.default_rng(4)
    informative = rng.normal(size=2000)
    X = np.column_stack([np.full(2000, 5.0), informative,
                         rng.normal(size=2000)])
    y = (informative > 0).astype(int)
    model = RandomForestClassifier(random_state=0).fit(X, y)
    imp = gini_importance(model, ("const", "signal", "noise"))
    assert imp["values"]["const"] < 1e-6
    assert imp["values"]["signal"] > 0.9
    assert sum(imp["values"].values()) == pytest.approx(1.0)
