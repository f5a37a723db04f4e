"""From a finished run to the labeled detector dataset.

Extracts one row per outgoing short-header packet (payload length, migration
payload length, inter-send delta) and contrasts the benign and malicious
marginals: after mimicry, the two should be hard to tell apart.
"""

import statistics
import tempfile

from quicmimic.features import anomaly_share, export_csv, extract
from quicmimic.scenario import mixed_scenario
from quicmimic.testbed import run_experiment

cfg = mixed_scenario(flow_count=4, duration_s=150.0, time_compression=30.0,
                     infected_flow_fraction=0.5, eligibility_min_packets=300)
out_dir = tempfile.mkdtemp(prefix="quicmimic-features-")
print("running the scenario ...")
result = run_experiment(cfg, seed=123, out_dir=out_dir)

rows = extract(result.observer_table)
csv_path = out_dir + "/features_again.csv"
export_csv(rows, csv_path)
print(f"{len(rows)} rows, anomaly share {anomaly_share(rows):.3%} -> {csv_path}")


def describe(label):
    lens = [r.payload_len for r in rows if r.label == label]
    deltas = [r.time_delta_us for r in rows
              if r.label == label and r.time_delta_us is not None]
    print(f"  {label:9s} n={len(lens):6d}  "
          f"len p50={statistics.median(lens):6.0f}  "
          f"delta p50={statistics.median(deltas)/1000:7.2f} ms")


print("per-label marginals (mimicry makes these overlap):")
describe("benign")
describe("malicious")

migrations = [r for r in rows if r.is_migration]
print(f"migration rows: {len(migrations)} "
      f"({sum(1 for r in migrations if r.label == 'malicious')} spoofed), "
      f"probe sizes {sorted(set(r.migration_payload_len for r in migrations))}")
