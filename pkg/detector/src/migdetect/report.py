"""Report assembly: JSON document plus the human-readable metric table."""

from __future__ import annotations

import json

from .dataset import check_ablation_pair, load_run
from .detectors import CLASSIFIER_NAMES, train_eval

REPORT_SCHEMA = "migdetect-report-v1"

_METRIC_ROWS = (("F1-Score", "f1"), ("Recall", "recall"),
                ("Precision", "precision"), ("Accuracy", "accuracy"))


def build_report(sections: list) -> dict:
    return {"schema": REPORT_SCHEMA, "runs": sections}


def save_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_table(sections: list) -> str:
    """Classifier x metric rows against one column per scenario/run."""
    names = [s.get("scenario", "?") for s in sections]
    width = max([8] + [len(n) for n in names]) + 2
    lines = []
    header = f"{'Classifier':<12}{'Metric':<12}" + "".join(
        f"{n:>{width}}" for n in names)
    lines.append(header)
    lines.append("-" * len(header))
    for clf in CLASSIFIER_NAMES:
        for i, (label, key) in enumerate(_METRIC_ROWS):
            cells = []
            for section in sections:
                entry = section["classifiers"].get(clf, {})
                if "metrics" in entry:
                    cells.append(f"{entry['metrics'][key]:{width}.2f}")
                else:
                    cells.append(f"{'-':>{width}}")
            lines.append(f"{clf if i == 0 else '':<12}{label:<12}" + "".join(cells))
        lines.append("")
    return "\n".join(lines)


def format_importances(sections: list) -> str:
    lines = []
    for section in sections:
        for clf in ("RF", "MLP"):
            entry = section["classifiers"].get(clf, {})
            imp = entry.get("importance", {})
            if not imp.get("supported"):
                continue
            ranked = sorted(imp["values"].items(), key=lambda kv: -kv[1])
            pretty = ", ".join(f"{k}={v:.3f}" for k, v in ranked)
            lines.append(f"{section.get('scenario', '?')} {clf} "
                         f"({imp['method']}): {pretty}")
    return "\n".join(lines)


def run_training(run_dirs: list, seed: int, scenario: str = None) -> dict:
    """Train and evaluate over one or more testbed run directories."""
    sections = []
    for run_dir in run_dirs:
        dataset, manifest = load_run(run_dir)
        name = scenario or manifest["scenario"]["name"]
        section = train_eval(dataset, seed=seed, scenario=name)
        section["manifest_seed"] = manifest["seed"]
        section["manifest_counts"] = manifest["counts"]
        sections.append(section)
    return build_report(sections)


def run_ablation(run_mimic: str, run_ablated: str, seed: int) -> dict:
    """Paired evaluation of a mimicked run against its constant-rate twin."""
    data_a, manifest_a = load_run(run_mimic)
    data_b, manifest_b = load_run(run_ablated)
    check_ablation_pair(manifest_a, manifest_b)
    mimic_on = manifest_a["scenario"]["mimic_timing"]
    section_a = train_eval(data_a, seed=seed,
                           scenario="mimicry-on" if mimic_on else "mimicry-off")
    section_b = train_eval(data_b, seed=seed,
                           scenario="mimicry-off" if mimic_on else "mimicry-on")
    delta_f1 = {}
    for clf in CLASSIFIER_NAMES:
        entry_a = section_a["classifiers"].get(clf, {})
        entry_b = section_b["classifiers"].get(clf, {})
        if "metrics" in entry_a and "metrics" in entry_b:
            off = entry_b if section_b["scenario"] == "mimicry-off" else entry_a
            on = entry_a if off is entry_b else entry_b
            delta_f1[clf] = off["metrics"]["f1"] - on["metrics"]["f1"]
    report = build_report([section_a, section_b])
    report["ablation"] = {
        "delta_f1_off_minus_on": delta_f1,
        "seeds": {"run_a": manifest_a["seed"], "run_b": manifest_b["seed"],
                  "eval": seed},
        "manifests": {"run_a": manifest_a, "run_b": manifest_b},
    }
    return report
