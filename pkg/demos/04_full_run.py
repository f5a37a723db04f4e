"""One small closed-loop experiment, end to end.

Benign flows replay over loopback while the sniffer builds its datasets;
once a targeted connection retires, a mimicked server-side migration opens
against a single-use destination address and the"exfiltrated" bytes are
reconstructed on the receiving side. Ground truth lands in the manifest.
"""

import json
import tempfile

from quicmimic.scenario import mixed_scenario
from quicmimic.testbed import audit_blacklist_soundness, run_experiment

cfg = mixed_scenario(flow_count=4, duration_s=150.0, time_compression=30.0,
                     infected_flow_fraction=0.5, eligibility_min_packets=300,
                     exfil_total_bytes=32768)
out_dir = tempfile.mkdtemp(prefix="quicmimic-demo-")
print("running ~5s of compressed mixed traffic ...")
result = run_experiment(cfg, seed=99, out_dir=out_dir)

manifest = result.manifest
print(json.dumps(manifest["counts"], indent=2))
print("exfil_bytes:", manifest["exfil_bytes"], " valid:", manifest["valid"])
for job in manifest["jobs"]:
    print(f"  job flow={job['flow_index']} packets={job['packets_sent']} "
          f"delivered={job['data_bytes_delivered']} "
          f"reconstructed={job['reconstruction_match']}")

problems = audit_blacklist_soundness(result.attacker.table, result.observer_table)
print("blacklist audit violations:", problems)
print("artifacts in", out_dir)
for name, path in sorted(manifest["artifacts"].items()):
    print(f"  {name}: {path}")
