"""Loading the testbed's feature CSV schema into model-ready arrays.

The schema is the documented interface between the packages:
``flow_id,ts_us,payload_len,is_migration,migration_payload_len,
time_delta_us,label`` with an empty delta on a flow's first packet and
labels ``benign``/``malicious``. Rows without a delta carry only two of the
three features and are excluded from the classification matrix.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

CSV_COLUMNS = ("flow_id", "ts_us", "payload_len", "is_migration",
               "migration_payload_len", "time_delta_us", "label")

FEATURE_NAMES = ("payload_len", "migration_payload_len", "time_delta_us")

LABELS = {"benign": 0, "malicious": 1}

MANIFEST_SCHEMA = "quicmimic-manifest-v1"


class SchemaError(ValueError):
    """Input file does not match the documented interchange schema."""


@dataclass
class Dataset:
    X: np.ndarray           # (n, 3) float: payload len, migration len, delta us
    y: np.ndarray           # (n,) int: 0 benign, 1 malicious
    n_rows_total: int
    n_dropped_no_delta: int
    source: str

    @property
    def anomaly_fraction(self) -> float:
        return float(self.y.mean()) if len(self.y) else 0.0


def load_features(path) -> Dataset:
    """Parse one feature CSV into the (n, 3) matrix and label vector."""
    rows = []
    labels = []
    total = 0
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise SchemaError(f"unexpected feature CSV header: {header}")
        for rec in reader:
            total += 1
            if rec[5] == "":
                dropped += 1
                continue
            rows.append((float(rec[2]), float(rec[4]), float(rec[5])))
            label = rec[6]
            if label not in LABELS:
                raise SchemaError(f"unknown label {label!r}")
            labels.append(LABELS[label])
    X = np.asarray(rows, dtype=np.float64).reshape(-1, len(FEATURE_NAMES))
    y = np.asarray(labels, dtype=np.int64)
    return Dataset(X=X, y=y, n_rows_total=total, n_dropped_no_delta=dropped,
                   source=str(path))


def load_manifest(run_dir) -> dict:
    path = os.path.join(run_dir, "manifest.json")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise SchemaError(f"not a testbed run manifest: {path}")
    return manifest


def load_run(run_dir) -> tuple:
    """(Dataset, manifest) for a testbed run directory."""
    manifest = load_manifest(run_dir)
    csv_name = manifest["artifacts"]["features_csv"]
    dataset = load_features(os.path.join(run_dir, csv_name))
    return dataset, manifest


def check_ablation_pair(manifest_a: dict, manifest_b: dict) -> None:
    """Two runs pair for the ablation only if they differ in nothing but the
    timing-mimicry flag."""
    if manifest_a["seed"] != manifest_b["seed"]:
        raise SchemaError("ablation runs must share a seed")
    scen_a = dict(manifest_a["scenario"])
    scen_b = dict(manifest_b["scenario"])
    flag_a = scen_a.pop("mimic_timing")
    flag_b = scen_b.pop("mimic_timing")
    if scen_a != scen_b:
        raise SchemaError("ablation runs must share the scenario configuration")
    if flag_a == flag_b:
        raise SchemaError("ablation runs must differ in the timing-mimicry flag")
