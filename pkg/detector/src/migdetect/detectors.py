"""The five study classifiers and the shared evaluation protocol.

Supervised models (random forest, multi-layer perceptron, support vector
machine) train on the labeled 70/30 stratified split. Unsupervised models
fit on benign-only training data: the isolation forest's contamination is
the training anomaly fraction, and the autoencoder thresholds on the 95th
percentile of benign validation reconstruction error. Hyperparameters stay
at library defaults (recorded verbatim in the report); the one deviation is
a stratified training cap for the SVM, whose kernel fit is quadratic.

Everything is deterministic under the given seed.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.ensemble import IsolationForest, RandomForestClassifier
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier, MLPRegressor
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC

from .dataset import FEATURE_NAMES, Dataset
from .importance import gini_importance, shapley_importance, unsupported
from .metrics import always_benign_baseline, evaluate

CLASSIFIER_NAMES = ("RF", "MLP", "SVM", "AE", "IF")

SPLIT_RATIO = 0.3
SVM_TRAIN_CAP = 8000
AE_HIDDEN = (8, 2, 8)
AE_THRESHOLD_PERCENTILE = 95.0
IF_FALLBACK_CONTAMINATION = 0.03


def _subsample(X, y, cap, seed):
    if len(X) <= cap:
        return X, y
    frac = cap / len(X)
    X_sub, _, y_sub, _ = train_test_split(X, y, train_size=frac,
                                          stratify=y, random_state=seed)
    return X_sub, y_sub


def _fit_quiet(model, X, y=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if y is None:
            model.fit(X)
        else:
            model.fit(X, y)
    return model


def train_eval(dataset: Dataset, seed: int, scenario: str = "unnamed") -> dict:
    """Full study over one dataset: returns the report section for it."""
    X, y = dataset.X, dataset.y
    classes = np.unique(y)
    report = {
        "scenario": scenario,
        "seed": seed,
        "dataset": {
            "source": dataset.source,
            "rows_total": dataset.n_rows_total,
            "rows_used": int(len(y)),
            "rows_dropped_no_delta": dataset.n_dropped_no_delta,
            "anomaly_fraction": dataset.anomaly_fraction,
            "features": list(FEATURE_NAMES),
        },
        "split": {"ratio": SPLIT_RATIO, "stratified": True, "seed": seed},
        "classifiers": {},
        "notes": [
            "per-packet rows; windowed aggregation left as an extension",
            f"SVM training capped at {SVM_TRAIN_CAP} stratified rows",
        ],
    }

    single_class = len(classes) < 2
    if single_class:
        X_train, X_test = train_test_split(X, test_size=SPLIT_RATIO,
                                           random_state=seed)
        y_train = np.zeros(len(X_train), dtype=np.int64)
        y_test = np.zeros(len(X_test), dtype=np.int64)
    else:
        X_train, X_test, y_train, y_test = train_test_split(
            X, y, test_size=SPLIT_RATIO, stratify=y, random_state=seed)
    report["split"]["train_rows"] = int(len(X_train))
    report["split"]["test_rows"] = int(len(X_test))
    report["baseline_always_benign"] = always_benign_baseline(y_test)

    scaler = StandardScaler().fit(X_train)
    X_train_s = scaler.transform(X_train)
    X_test_s = scaler.transform(X_test)
    benign_train = X_train_s[y_train == 0]

    # supervised ---------------------------------------------------------
    if single_class:
        skip = "single-class training data; supervised models skipped"
        for name in ("RF", "MLP", "SVM"):
            report["classifiers"][name] = {"skipped": skip}
    else:
        rf = RandomForestClassifier(random_state=seed)
        _fit_quiet(rf, X_train, y_train)
        report["classifiers"]["RF"] = {
            "metrics": evaluate(y_test, rf.predict(X_test)),
            "hyperparams": {k: repr(v) for k, v in rf.get_params().items()},
            "importance": gini_importance(rf, FEATURE_NAMES),
        }

        mlp = MLPClassifier(random_state=seed)
        _fit_quiet(mlp, X_train_s, y_train)
        background = np.median(X_train_s, axis=0)
        rng = np.random.default_rng(seed)
        report["classifiers"]["MLP"] = {
            "metrics": evaluate(y_test, mlp.predict(X_test_s)),
            "hyperparams": {k: repr(v) for k, v in mlp.get_params().items()},
            "importance": shapley_importance(
                lambda M: mlp.predict_proba(M)[:, 1], X_test_s, background,
                FEATURE_NAMES, rng=rng),
        }

        X_svm, y_svm = _subsample(X_train_s, y_train, SVM_TRAIN_CAP, seed)
        svm = SVC(random_state=seed)
        _fit_quiet(svm, X_svm, y_svm)
        report["classifiers"]["SVM"] = {
            "metrics": evaluate(y_test, svm.predict(X_test_s)),
            "hyperparams": {k: repr(v) for k, v in svm.get_params().items()},
            "importance": unsupported("margin-based model; no native attribution"),
            "train_rows": int(len(X_svm)),
        }

    # unsupervised --------------------------------------------------------
    train_anomaly_fraction = float(y_train.mean()) if len(y_train) else 0.0
    contamination = train_anomaly_fraction or IF_FALLBACK_CONTAMINATION
    iforest = IsolationForest(random_state=seed, contamination=contamination)
    _fit_quiet(iforest, benign_train)
    if_pred = (iforest.predict(X_test_s) == -1).astype(np.int64)
    report["classifiers"]["IF"] = {
        "metrics": evaluate(y_test, if_pred),
        "hyperparams": {k: repr(v) for k, v in iforest.get_params().items()},
        "importance": unsupported("isolation paths; no per-feature attribution"),
        "contamination": contamination,
        "flagged_fraction": float(if_pred.mean()),
    }

    fit_rows, val_rows = train_test_split(benign_train, test_size=0.2,
                                          random_state=seed)
    ae = MLPRegressor(hidden_layer_sizes=AE_HIDDEN, random_state=seed,
                      max_iter=400)
    _fit_quiet(ae, fit_rows, fit_rows)
    val_err = np.mean((ae.predict(val_rows) - val_rows) ** 2, axis=1)
    threshold = float(np.percentile(val_err, AE_THRESHOLD_PERCENTILE))
    test_err = np.mean((ae.predict(X_test_s) - X_test_s) ** 2, axis=1)
    ae_pred = (test_err > threshold).astype(np.int64)
    report["classifiers"]["AE"] = {
        "metrics": evaluate(y_test, ae_pred),
        "hyperparams": {k: repr(v) for k, v in ae.get_params().items()},
        "importance": unsupported("reconstruction model; attribution not defined"),
        "threshold": threshold,
        "threshold_rule": f"p{AE_THRESHOLD_PERCENTILE:.0f} of benign validation error",
    }
    return report
