"""The timing-mimicry loop in isolation.

Measures this host's unthrottled base rate, then replays a small job whose
sleeps are sampled observed deltas minus that base rate. The send log shows
intended delta, computed sleep, and the delta that actually materialized.
"""

import random
import socket
import statistics

from quicmimic.flows import FlowState
from quicmimic.mimicry import ExfilJob, measure_base_rate, run_job

base_rate = measure_base_rate(n_probe=200)
print(f"base rate: median={base_rate.median_us}us mean={base_rate.mean_us}us "
      f"stddev={base_rate.stddev_us:.1f}us")

sink = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
sink.bind(("127.0.0.1", 0))

dcid = bytes.fromhex("0123456789abcdef")
flow = FlowState(dcid=dcid, payload_dataset=[1350] * 700 + [60] * 300,
                 dataset_total=1000, retired=True)
rng = random.Random(7)
observed_deltas = {dcid: [rng.randint(2_000, 25_000) for _ in range(500)]}

job = ExfilJob(flow=flow, dst=sink.getsockname(), n=150,
               payload_source=rng.randbytes(120_000), key=rng.randbytes(32),
               rng_len=random.Random(1), rng_time=random.Random(2),
               rng_crypto=random.Random(3), min_dataset=500,
               response_timeout_s=0)
run_job(job, observed_deltas, base_rate)
sink.close()

print(f"sent {job.sent_count} datagrams "
      f"({job.data_offset} data bytes framed), blacklist={len(job.blacklist)}")
print("first entries (intended / sleep / actual, us):")
for entry in job.log[1:6]:
    print(f"  {entry.intended_delta_us:6d} / {entry.sleep_us:6d} / "
          f"{entry.actual_delta_us:6d}")

errors = [e.actual_delta_us - max(e.intended_delta_us, base_rate.br_us)
          for e in job.log[2:]]
print(f"timing error: median={statistics.median(errors)/1000:.2f} ms, "
      f"worst={max(errors)/1000:.2f} ms")
print("long headers emitted:", sum(1 for e in job.log if e.first_byte & 0x80))
