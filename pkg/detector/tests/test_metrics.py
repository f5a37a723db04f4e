"""Metric arithmetic from the confusion matrix, checked against sklearn."""

import numpy as np
import pytest
from sklearn.metrics import f1_score, precision_score, recall_score

from migdetect.metrics import (always_benign_baseline, confusion_matrix,
                               evaluate, metrics_from_confusion)


def test_confusion_counts():
    y_true = [0, 0, 1, 1, 1, 0]
    y_pred = [0, 1, 1, 0, 1, 0]
    assert confusion_matrix(y_true, y_pred) == {"tp": 2, "fp": 1, "fn": 1, "tn": 2}


def test_metrics_from_known_confusion():
    out = metrics_from_confusion({"tp": 2, "fp": 1, "fn": 1, "tn": 2})
    assert out["precision"] == pytest.approx(2 / 3)
    assert out["recall"] == pytest.approx(2 / 3)
    assert out["f1"] == pytest.approx(2 / 3)
    assert out["accuracy"] == pytest.approx(4 / 6)


def test_f1_identity_holds():
    out = metrics_from_confusion({"tp": 7, "fp": 3, "fn": 5, "tn": 100})
    p, r = out["precision"], out["recall"]
    assert out["f1"] == pytest.approx(2 * p * r / (p + r), abs=1e-12)


def test_zero_division_guards():
    out = metrics_from_confusion({"tp": 0, "fp": 0, "fn": 0, "tn": 10})
    assert out == {"precision": 0.0, "recall": 0.0, "f1": 0.0, "accuracy": 1.0}


def test_matches_sklearn_on_random_predictions():
    rng = np.random.default_rng(0)
    y_true = (rng.random(5000) < 0.05).astype(int)
    y_pred = (rng.random(5000) < 0.08).astype(int)
    ours = evaluate(y_true, y_pred)
    assert ours["precision"] == pytest.approx(precision_score(y_true, y_pred))
    assert ours["recall"] == pytest.approx(recall_score(y_true, y_pred))
    assert ours["f1"] == pytest.approx(f1_score(y_true, y_pred))


def test_always_benign_baseline_on_imbalanced_labels():
    y_true = np.zeros(1000, dtype=int)
    y_true[:30] = 1
    out = always_benign_baseline(y_true)
    assert out["accuracy"] == pytest.approx(0.97)
    assert out["f1"] == 0.0
