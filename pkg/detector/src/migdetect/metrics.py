"""Classification metrics computed from first principles.

Every reported number derives from the confusion matrix assembled here, not
from library scoring helpers: precision/recall/F1 are anomaly-class only,
accuracy spans both classes. A trivial always-benign baseline is included
because accuracy alone is misleading on ~3% anomaly data.
"""

from __future__ import annotations

import numpy as np


def confusion_matrix(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    return {
        "tp": int(((y_true == 1) & (y_pred == 1)).sum()),
        "fp": int(((y_true == 0) & (y_pred == 1)).sum()),
        "fn": int(((y_true == 1) & (y_pred == 0)).sum()),
        "tn": int(((y_true == 0) & (y_pred == 0)).sum()),
    }


def metrics_from_confusion(cm: dict) -> dict:
    tp, fp, fn, tn = cm["tp"], cm["fp"], cm["fn"], cm["tn"]
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    return {"precision": precision, "recall": recall, "f1": f1,
            "accuracy": accuracy}


def evaluate(y_true, y_pred) -> dict:
    cm = confusion_matrix(y_true, y_pred)
    out = metrics_from_confusion(cm)
    out["confusion"] = cm
    return out


def always_benign_baseline(y_true) -> dict:
    """The majority-class strawman: high accuracy, zero anomaly F1."""
    return evaluate(y_true, np.zeros(len(np.asarray(y_true)), dtype=np.int64))
