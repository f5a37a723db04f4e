"""Generate a benign schedule, write it as a capture file, and re-ingest it.

The generator is pure: the same (config, seed) pair reproduces the capture
byte for byte. Ingesting the capture rebuilds per-flow payload datasets and
the inter-send delta tables the mimicry engine later samples from.
"""

import statistics
import tempfile
from pathlib import Path

from quicmimic.pcap import PcapWriter, ingest_capture
from quicmimic.scenario import generate_benign_flows, mixed_scenario

cfg = mixed_scenario(flow_count=4, duration_s=120.0,
                     benign_migration_interval_s=(10.0, 50.0))
schedule = generate_benign_flows(cfg, seed=2024)
print(f"schedule: {len(schedule.flows)} flows, "
      f"{schedule.total_outgoing_short} outgoing short packets, "
      f"{schedule.benign_migrations} benign migrations")

out = Path(tempfile.mkdtemp()) / "benign.pcap"
with PcapWriter(out) as writer:
    for ev in schedule.merged_events():
        writer.write(ev.ts_us, ev.src, ev.dst, ev.datagram)
print("capture written:", out, f"({out.stat().st_size} bytes)")

result = ingest_capture(out, port=cfg.quic_port)
print("re-ingested flows:", len(result.table))
for flow in result.table.snapshot_flows():
    lens = flow.payload_dataset
    print(f"  {flow.dcid.hex()}  packets={len(flow.records):5d} "
          f"dataset={len(lens):5d}  median_len={int(statistics.median(lens)):4d} "
          f"migrations={len(flow.migration_events)}")

deltas = result.table.compute_time_deltas()
for dcid, values in deltas.items():
    print(f"  {dcid.hex()}  median_delta={statistics.median(values)/1000:7.2f} ms "
          f"over {len(values)} gaps")
