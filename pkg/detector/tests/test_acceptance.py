"""Detection-study acceptance: one test per criterion, each printing PASS.

  S1 mimicked desk-scale run: every classifier's anomaly-class F1 <= 0.5
     while accuracy >= 0.85, at ~3% anomaly share, under 10 minutes in all
  S2 disabling time-delta mimicry raises RF anomaly F1 by >= 0.2
  S3 RF Gini ranks the inter-send delta first on the mimicry-off run
  S4 F1 recomputed from confusion matrices matches to 1e-9; the
     always-benign baseline scores accuracy >= 0.9 with F1 = 0
"""

import time

import pytest

from migdetect.dataset import load_run
from migdetect.detectors import CLASSIFIER_NAMES, train_eval
from migdetect.metrics import metrics_from_confusion
from migdetect.report import format_table, run_ablation


def report(criterion, detail):
    print(f"{criterion} PASS  {detail}")


@pytest.fixture(scope="module")
def mimic_section(study):
    dataset, manifest = load_run(study.run_mimic)
    section = train_eval(dataset, seed=5, scenario="mixed")
    section["_dataset"] = dataset
    section["_train_seconds"] = study.generation_seconds
    return section


@pytest.fixture(scope="module")
def ablation_report(study):
    return run_ablation(study.run_mimic, study.run_ablated, seed=5)


def test_s1_classifiers_cannot_detect_mimicked_traffic(mimic_section, study):
    started = time.perf_counter()
    share = mimic_section["dataset"]["anomaly_fraction"]
    assert abs(share - 0.03) <= 0.01, "anomaly share drifted from ~3%"
    print(format_table([mimic_section]))
    for name in CLASSIFIER_NAMES:
        entry = mimic_section["classifiers"][name]
        assert "metrics" in entry, f"{name} was skipped"
        assert entry["metrics"]["f1"] <= 0.5, name
        assert entry["metrics"]["accuracy"] >= 0.85, name
    elapsed = study.generation_seconds + (time.perf_counter() - started)
    assert elapsed < 600.0
    worst = max(mimic_section["classifiers"][n]["metrics"]["f1"]
                for n in CLASSIFIER_NAMES)
    report("S1", f"anomaly share {share:.3f}; all five F1 <= 0.5 "
                 f"(worst {worst:.2f}) with accuracy >= 0.85; "
                 f"end-to-end {elapsed:.0f}s < 600s")


def test_s2_ablating_time_delta_mimicry_exposes_rf(ablation_report):
    deltas = ablation_report["ablation"]["delta_f1_off_minus_on"]
    assert deltas["RF"] >= 0.2
    report("S2", f"RF anomaly F1 rises by {deltas['RF']:+.2f} "
                 "when timing mimicry is disabled")


def test_ablation_report_carries_both_runs_provenance(ablation_report):
    ablation = ablation_report["ablation"]
    assert ablation["seeds"]["run_a"] == ablation["seeds"]["run_b"] == 23
    for key in ("run_a", "run_b"):
        manifest = ablation["manifests"][key]
        assert manifest["schema"] == "quicmimic-manifest-v1"
        assert "counts" in manifest


def test_s3_time_delta_ranks_first_without_mimicry(ablation_report):
    off_section = next(s for s in ablation_report["runs"]
                       if s["scenario"] == "mimicry-off")
    gini = off_section["classifiers"]["RF"]["importance"]["values"]
    ranked = sorted(gini, key=gini.get, reverse=True)
    assert ranked[0] == "time_delta_us", gini
    report("S3", f"RF Gini on the mimicry-off run: "
                 + ", ".join(f"{k}={gini[k]:.3f}" for k in ranked))


def test_s4_metric_identities_and_trivial_baseline(mimic_section):
    checked = 0
    for name in CLASSIFIER_NAMES:
        entry = mimic_section["classifiers"][name]
        recomputed = metrics_from_confusion(entry["metrics"]["confusion"])
        for key in ("precision", "recall", "f1", "accuracy"):
            assert abs(recomputed[key] - entry["metrics"][key]) <= 1e-9
        checked += 1
    baseline = mimic_section["baseline_always_benign"]
    assert baseline["accuracy"] >= 0.9
    assert baseline["f1"] == 0.0
    report("S4", f"{checked} classifiers pass the confusion-matrix identity; "
                 f"always-benign baseline accuracy "
                 f"{baseline['accuracy']:.3f} with F1 = 0")
