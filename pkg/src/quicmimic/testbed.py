"""Closed-loop loopback testbed.

Every component talks over real UDP sockets, but all sends pass through a
:class:`LoopbackWire` that injects (deterministic) loss and mirrors each
datagram to two consumers:

* the *observer* — the middlebox view: ground-truth labeled records, the
  capture file, and the feature dataset;
* the *attacker sniffer* — the exfiltration tool's view: blacklist-filtered,
  parsed with the version-independent parser, feeding the payload-length
  datasets and delta tables the mimicry engine samples from.

A run starts the benign responder and the exfiltration server, replays the
deterministic benign schedule in (compressed) real time, launches one
mimicked migration per infected flow once its connection retires, and ends
by writing the capture, feature CSV, send logs, and the run manifest.

All ground-truth quantities in the manifest (counts, budgets, chunk bytes,
reconstruction digests) are bit-deterministic under (config, seed); measured
wall-clock timings are kept out of it and live in run_stats.json instead.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import select
import socket
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from . import features as features_mod
from .flows import (Direction, FlowTable, Label, PacketKind, PacketRecord,
                    ProbeResult, probe_rebind)
from .mimicry import (CHALLENGE_LEN, MIN_PROBE_DATAGRAM, BaseRate, Blacklist,
                      ExfilJob, blacklist_check, build_path_response,
                      decode_frame, measure_base_rate, run_job, write_send_log)
from .pcap import PcapWriter
from .scenario import (BenignSchedule, ScenarioConfig, generate_benign_flows,
                       plan_budgets, plan_infections, scenario_to_config_text)
from .util import derive_key, derive_rng
from .wire import CidRegistry, DiscardReason, HeaderKind, parse_datagram, register_long_header

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "quicmimic-manifest-v1"
SETTLE_US = 300_000          # attacker waits this long after a flow's last packet
MONITOR_POLL_S = 0.05
DRAIN_TIMEOUT_S = 5.0


class RunClock:
    """Monotonic run clock with an epoch-like base, shared by all components."""

    def __init__(self):
        self._epoch_us = time.time_ns() // 1000
        self._t0 = time.perf_counter_ns()

    def now_us(self) -> int:
        return self._epoch_us + (time.perf_counter_ns() - self._t0) // 1000


@dataclass
class TapMeta:
    label: Label
    kind: PacketKind
    dcid: bytes
    payload_len: int
    direction: Direction


class LoopbackWire:
    """Mediated send path: deterministic loss injection plus the capture tap.

    The drop decision hashes the datagram bytes with a seeded salt, so a
    given datagram's fate is independent of fire order and reproducible
    across runs. The tap sits before the loss point, like a capture on the
    sender-side interface.
    """

    def __init__(self, loss_rate: float = 0.0, drop_salt: bytes = b"", taps=()):
        self.loss_rate = loss_rate
        self.drop_salt = drop_salt
        self.taps = list(taps)
        self.sent = 0
        self.dropped = 0
        self._threshold = int(loss_rate * 2 ** 64)

    def _drop(self, datagram: bytes) -> bool:
        digest = hashlib.sha3_256(self.drop_salt + datagram).digest()
        return int.from_bytes(digest[:8], "big") < self._threshold

    def send(self, datagram: bytes, src: tuple, dst: tuple,
             sock: Optional[socket.socket], meta: TapMeta) -> bool:
        delivered = True
        if self.loss_rate > 0 and self._drop(datagram):
            delivered = False
            self.dropped += 1
        if delivered and sock is not None:
            sock.sendto(datagram, dst)
        self.sent += 1
        for tap in self.taps:
            tap(src, dst, datagram, meta, delivered)
        return delivered


class Observer:
    """Ground-truth consumer: labeled flow table, capture file, record dump."""

    def __init__(self, clock: RunClock, capture_path=None, records_path=None):
        self.clock = clock
        self.table = FlowTable()
        self._pcap = PcapWriter(capture_path) if capture_path else None
        self._records_fh = open(records_path, "w", encoding="utf-8") if records_path else None
        self._lock = threading.Lock()

    def tap(self, src, dst, datagram, meta: TapMeta, delivered: bool) -> None:
        with self._lock:
            ts = self.clock.now_us()
            if self._pcap is not None:
                self._pcap.write(ts, src, dst, datagram)
            if not meta.dcid:
                return
            record = PacketRecord(ts, (src[0], dst[0], src[1], dst[1], "udp"),
                                  meta.dcid, meta.payload_len, meta.kind,
                                  meta.direction, meta.label)
            self.table.ingest(record)
            if self._records_fh is not None:
                self._records_fh.write(json.dumps({
                    "ts_us": ts, "src_ip": src[0], "src_port": src[1],
                    "dst_ip": dst[0], "dst_port": dst[1],
                    "dcid": meta.dcid.hex(), "payload_len": meta.payload_len,
                    "kind": meta.kind.value, "direction": meta.direction.value,
                    "label": meta.label.value,
                    "is_migration": record.is_migration}) + "\n")

    def close(self) -> None:
        with self._lock:
            if self._pcap is not None:
                self._pcap.close()
                self._pcap = None
            if self._records_fh is not None:
                self._records_fh.close()
                self._records_fh = None


class AttackerSniffer:
    """The exfiltration tool's view of outgoing traffic.

    Raw datagrams are checked against the self-traffic blacklist first, then
    parsed using only version-independent header properties; long headers
    populate the CID registry, short headers land in the flow table.
    """

    def __init__(self, clock: RunClock, blacklist: Blacklist, reservoir_rng=None):
        self.clock = clock
        self.blacklist = blacklist
        self.registry = CidRegistry()
        self.table = FlowTable(reservoir_rng=reservoir_rng)
        self.blacklist_hits = 0
        self.discards = {reason.value: 0 for reason in DiscardReason}

    def tap(self, src, dst, datagram, meta: TapMeta, delivered: bool) -> None:
        if meta.direction is not Direction.OUTGOING:
            return
        self.process(src, dst, datagram)

    def process(self, src, dst, datagram: bytes) -> None:
        if blacklist_check(datagram, self.blacklist):
            self.blacklist_hits += 1
            return
        ts = self.clock.now_us()
        flow_key = (src[0], dst[0], src[1], dst[1], "udp")
        parsed = parse_datagram(datagram, self.registry, flow_key=flow_key, now_us=ts)
        if parsed.kind is HeaderKind.DISCARDED:
            self.discards[parsed.discard_reason.value] += 1
            return
        if parsed.kind is HeaderKind.LONG:
            register_long_header(parsed.header, self.registry, flow_key=flow_key,
                                 now_us=ts)
            record = PacketRecord(ts, flow_key, parsed.header.dcid,
                                  len(parsed.header.remainder), PacketKind.LONG,
                                  Direction.OUTGOING, Label.BENIGN)
        else:
            record = PacketRecord(ts, flow_key, parsed.header.dcid,
                                  len(parsed.header.payload), PacketKind.SHORT,
                                  Direction.OUTGOING, Label.BENIGN)
        self.table.ingest(record)

    def summary(self) -> dict:
        return {"flows": len(self.table),
                "blacklist_hits": self.blacklist_hits,
                "discards": dict(self.discards),
                "dropped_unknown_dcid": self.table.dropped_unknown_dcid}


class BenignResponder(threading.Thread):
    """Stand-in benign QUIC server: path responses and ack-sized replies."""

    def __init__(self, wire: LoopbackWire, addrs, dcid_resolver=None,
                 seed: int = 0):
        super().__init__(name="benign-responder", daemon=True)
        self.wire = wire
        self.rng = derive_rng(seed, "benign-responder")
        self.dcid_resolver = dcid_resolver or (lambda addr: b"")
        self.stop_event = threading.Event()
        self.replies = 0
        self._socks = []
        for addr in addrs:
            s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            s.bind(addr)
            s.setblocking(False)
            self._socks.append(s)

    def run(self) -> None:
        while not self.stop_event.is_set():
            ready, _, _ = select.select(self._socks, [], [], 0.1)
            for s in ready:
                try:
                    data, addr = s.recvfrom(65535)
                    self._reply(s, data, addr)
                except OSError:
                    continue  # a reply to a just-closed client must not kill us
        for s in self._socks:
            s.close()

    def _reply(self, sock, data: bytes, addr) -> None:
        dcid = self.dcid_resolver(addr)
        if not dcid:
            return
        if len(data) >= MIN_PROBE_DATAGRAM:
            # a path probe expects a >=1200-byte answer
            payload = self.rng.randbytes(max(MIN_PROBE_DATAGRAM - 1 - len(dcid), 1350))
        else:
            payload = self.rng.randbytes(self.rng.randint(28, 52))
        first = bytes([0x40 | self.rng.randrange(0x40)])
        reply = first + dcid + payload
        meta = TapMeta(Label.BENIGN, PacketKind.SHORT, dcid,
                       len(reply) - 1 - len(dcid), Direction.INCOMING)
        self.wire.send(reply, sock.getsockname()[:2], addr, sock, meta)
        self.replies += 1


@dataclass
class ReassemblyState:
    """Per-job chunk reassembly on the exfiltration server."""
    src: tuple
    dcid_len: int = 0
    chunks: dict = field(default_factory=dict)  # seq -> chunk (duplicates ignored)
    challenge_seen: bool = False

    def add(self, seq: int, chunk: bytes) -> None:
        self.chunks.setdefault(seq, chunk)

    def received_seqs(self) -> set:
        return set(self.chunks)

    def is_contiguous(self) -> bool:
        if not self.chunks:
            return False
        return set(self.chunks) == set(range(max(self.chunks) + 1))

    def missing_up_to(self, n: int) -> set:
        return set(range(n)) - set(self.chunks)

    def data(self) -> bytes:
        return b"".join(self.chunks[seq] for seq in sorted(self.chunks))

    def digest(self) -> str:
        return hashlib.sha3_256(self.data()).hexdigest()


class ExfilServer(threading.Thread):
    """Accepts mimicked migrations, answers them, reconstructs the stream.

    Listens on the run's single-use exfiltration addresses, which share the
    QUIC port with the benign servers: to the capture, the traffic is just
    more QUIC to a previously unseen address. The server only knows the
    shared key; it resolves each sender's DCID length by trial decryption
    (QUIC CIDs are at most 20 bytes), caching the result per source address.
    Undecodable datagrams are counted, dropped, and answered with nothing
    more than a generic ack.
    """

    MAX_CID_LEN = 20

    def __init__(self, wire: LoopbackWire, key: bytes, addrs, seed: int = 0):
        super().__init__(name="exfil-server", daemon=True)
        self.wire = wire
        self.key = key
        self.rng = derive_rng(seed, "exfil-server")
        self.stop_event = threading.Event()
        self.states: dict[tuple, ReassemblyState] = {}
        self.undecryptable = 0
        self.path_responses = 0
        self.response_lens: list = []   # datagram sizes of path responses
        self.acks_sent = 0
        self.datagrams = 0
        self._lock = threading.Lock()
        self._socks = []
        for addr in addrs:
            s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            s.bind(addr)
            s.setblocking(False)
            self._socks.append(s)
        self._reply_sock = self._socks[0] if self._socks else None

    def run(self) -> None:
        while not self.stop_event.is_set():
            ready, _, _ = select.select(self._socks, [], [], 0.1)
            for s in ready:
                try:
                    data, addr = s.recvfrom(65535)
                    self.handle(data, addr, sock=s)
                except OSError:
                    continue  # an unreachable reply path must not kill the server
        for s in self._socks:
            s.close()

    def handle(self, data: bytes, addr, sock=None) -> None:
        sock = sock if sock is not None else self._reply_sock
        with self._lock:
            self.datagrams += 1
            state = self.states.setdefault(addr, ReassemblyState(src=addr))
            decoded = self._decode(data, state)
            if decoded is None:
                self.undecryptable += 1
                self._send_ack(sock, addr, b"")
                return
            dcid, seq, chunk, challenge = decoded
            state.add(seq, chunk)
            if challenge is not None:
                state.challenge_seen = True
                resp = build_path_response(challenge, dcid, self.rng)
                meta = TapMeta(Label.MALICIOUS, PacketKind.SHORT, dcid,
                               len(resp) - 1 - len(dcid), Direction.INCOMING)
                self.wire.send(resp, sock.getsockname()[:2], addr, sock, meta)
                self.path_responses += 1
                self.response_lens.append(len(resp))
            else:
                self._send_ack(sock, addr, dcid)

    def _decode(self, data: bytes, state: ReassemblyState):
        if len(data) < 2 or data[0] & 0x80:
            return None
        lens = ([state.dcid_len] if state.dcid_len
                else range(1, min(self.MAX_CID_LEN, len(data) - 1) + 1))
        for cid_len in lens:
            body = data[1 + cid_len:]
            frame = decode_frame(self.key, body)
            if frame is not None:
                state.dcid_len = cid_len
                return data[1:1 + cid_len], frame[0], frame[1], None
            if len(data) >= MIN_PROBE_DATAGRAM and len(body) > CHALLENGE_LEN:
                frame = decode_frame(self.key, body[CHALLENGE_LEN:])
                if frame is not None:
                    state.dcid_len = cid_len
                    return (data[1:1 + cid_len], frame[0], frame[1],
                            body[:CHALLENGE_LEN])
        return None

    def _send_ack(self, sock, addr, dcid: bytes) -> None:
        payload = self.rng.randbytes(self.rng.randint(25, 45))
        ack = bytes([0x40 | self.rng.randrange(0x40)]) + dcid + payload
        meta = TapMeta(Label.MALICIOUS, PacketKind.SHORT, dcid,
                       len(ack) - 1 - len(dcid), Direction.INCOMING)
        src = sock.getsockname()[:2] if sock is not None else ("127.0.0.1", 0)
        self.wire.send(ack, src, addr, sock, meta)
        self.acks_sent += 1

    def snapshot_states(self) -> dict:
        with self._lock:
            return dict(self.states)


# -- orchestration -----------------------------------------------------------

@dataclass
class JobOutcome:
    flow_index: int
    dcid: bytes
    dst: tuple
    src_port: int
    job: ExfilJob
    slice_digest: str
    error: Optional[str] = None


def _replay_schedule(schedule: BenignSchedule, wire: LoopbackWire,
                     stop_event: threading.Event) -> None:
    """Send the benign schedule over real sockets, pacing by event timestamps.

    Each flow owns a socket bound to its planned source port for its entire
    on-schedule lifetime; closing it after the flow's last event is what the
    rebind probe later detects as retirement.
    """
    events = schedule.merged_events()
    remaining = {f.index: len(f.events) for f in schedule.flows}
    socks: dict[int, socket.socket] = {}
    t0 = time.perf_counter_ns() // 1000
    try:
        for ev in events:
            if stop_event.is_set():
                break
            delay_us = ev.ts_us - (time.perf_counter_ns() // 1000 - t0)
            if delay_us > 500:
                time.sleep(delay_us / 1_000_000)
            sock = socks.get(ev.flow_index)
            if sock is None:
                sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                sock.bind(ev.src)
                socks[ev.flow_index] = sock
            meta = TapMeta(Label.BENIGN,
                           PacketKind.LONG if ev.kind == "long" else PacketKind.SHORT,
                           ev.dcid, ev.payload_len, Direction.OUTGOING)
            wire.send(ev.datagram, ev.src, ev.dst, sock, meta)
            remaining[ev.flow_index] -= 1
            if remaining[ev.flow_index] == 0:
                sock.close()
                del socks[ev.flow_index]
    finally:
        for sock in socks.values():
            sock.close()


class JobMonitor(threading.Thread):
    """Watches targeted flows through the attacker's own table and launches
    one exfiltration job per flow once its connection retires.

    Retirement is decided live by the rebind probe alone; idle time is only a
    precondition for probing, never grounds for retirement by itself. Each
    target gets its own single-use destination address and fixture slice,
    assigned deterministically up front.
    """

    def __init__(self, targets, attacker: AttackerSniffer, wire: LoopbackWire,
                 clock: RunClock, cfg: ScenarioConfig, seed: int, key: bytes,
                 base_rate: BaseRate, blacklist: Blacklist, fixture: bytes,
                 budgets: dict, deadline_s: float, dst_pool: list,
                 dest_acknowledged: bool = False):
        super().__init__(name="job-monitor", daemon=True)
        self.targets = list(targets)
        self.attacker = attacker
        self.wire = wire
        self.clock = clock
        self.cfg = cfg
        self.seed = seed
        self.key = key
        self.base_rate = base_rate
        self.blacklist = blacklist
        self.budgets = budgets
        self.deadline_s = deadline_s
        self.dest_acknowledged = dest_acknowledged
        self.stop_event = threading.Event()
        self.outcomes: list[JobOutcome] = []
        self.skipped: list[int] = []
        self._threads: list[threading.Thread] = []
        self._dsts = {}
        self._slices = {}
        k = max(len(self.targets), 1)
        slice_len = (len(fixture) + k - 1) // k if fixture else 0
        for pos, plan in enumerate(self.targets):
            self._dsts[plan.index] = dst_pool[pos]
            self._slices[plan.index] = (fixture[pos * slice_len:(pos + 1) * slice_len]
                                        if fixture else b"")

    def run(self) -> None:
        deadline = time.perf_counter() + self.deadline_s
        pending = {p.index: p for p in self.targets}
        while pending and not self.stop_event.is_set():
            if time.perf_counter() > deadline:
                self.skipped.extend(sorted(pending))
                logger.warning("monitor deadline: %d target(s) never retired",
                               len(pending))
                break
            for idx in sorted(pending):
                plan = pending[idx]
                flow = self.attacker.table.get(plan.dcid)
                if flow is None or flow.dataset_total < self.cfg.eligibility_min_packets:
                    continue
                last = flow.last_ts_us()
                if last is None or self.clock.now_us() - last < SETTLE_US:
                    continue
                probe = probe_rebind(plan.src_port)
                if probe is ProbeResult.PERMISSION_DENIED:
                    self.attacker.table.probe_errors += 1
                    continue
                if probe is not ProbeResult.REBOUND:
                    continue
                self.attacker.table.detect_retirement(flow, probe=probe,
                                                      now_us=self.clock.now_us())
                self._launch(plan, flow)
                del pending[idx]
            time.sleep(MONITOR_POLL_S)
        for t in self._threads:
            t.join()

    def _launch(self, plan, flow) -> None:
        dst = self._dsts[plan.index]
        data = self._slices[plan.index]
        job = ExfilJob(
            flow=flow, dst=dst, n=self.budgets.get(plan.index, 1),
            payload_source=data, key=self.key,
            rng_len=derive_rng(self.seed, "job", plan.dcid.hex(), "len"),
            rng_time=derive_rng(self.seed, "job", plan.dcid.hex(), "time"),
            rng_crypto=derive_rng(self.seed, "job", plan.dcid.hex(), "crypto"),
            min_dataset=self.cfg.eligibility_min_packets,
            fresh_dcid=self.cfg.fresh_dcid,
            probe_payload_len=self.cfg.probe_payload_len,
            stop_when_done=self.cfg.budget_mode == "fixture",
            dest_acknowledged=self.dest_acknowledged,
            blacklist=self.blacklist,
        )
        wire = self.wire

        def sender(datagram: bytes, dst_: tuple, sock) -> bool:
            src = sock.getsockname()[:2] if sock is not None else ("127.0.0.1", 0)
            dcid = job.wire_dcid
            meta = TapMeta(Label.MALICIOUS, PacketKind.SHORT, dcid,
                           len(datagram) - 1 - len(dcid), Direction.OUTGOING)
            return wire.send(datagram, src, dst_, sock, meta)

        job.sender = sender
        outcome = JobOutcome(plan.index, plan.dcid, dst, plan.src_port, job,
                             hashlib.sha3_256(data).hexdigest())
        self.outcomes.append(outcome)
        deltas = self.attacker.table.compute_time_deltas()

        def _run():
            try:
                run_job(job, deltas, self.base_rate, src_port=plan.src_port,
                        stop_event=self.stop_event,
                        mimic_timing=self.cfg.mimic_timing)
            except Exception as exc:  # a failed job flags the manifest, not the run
                outcome.error = str(exc)
                logger.exception("exfil job for flow %d failed", plan.index)

        thread = threading.Thread(target=_run, daemon=True,
                                  name=f"exfil-{plan.index}")
        self._threads.append(thread)
        thread.start()


@dataclass
class RunResult:
    config: ScenarioConfig
    seed: int
    out_dir: str
    schedule: BenignSchedule
    observer_table: FlowTable
    attacker: AttackerSniffer
    outcomes: list
    base_rate: Optional[BaseRate]
    server: ExfilServer
    manifest: dict
    feature_rows: list
    paths: dict


def audit_blacklist_soundness(attacker_table: FlowTable,
                              observer_table: FlowTable) -> list:
    """Cross-check the attacker's benign view against ground truth.

    For every flow the attacker tracked, its payload-length dataset must
    equal (as a multiset) the observer's benign outgoing short-header lengths
    for the same DCID: any surplus means a self-emitted datagram leaked past
    the blacklist into the benign dataset.
    """
    problems = []
    for flow in attacker_table.snapshot_flows():
        truth = observer_table.get(flow.dcid)
        truth_lens = Counter(
            r.payload_len for r in (truth.records if truth else [])
            if r.direction is Direction.OUTGOING and r.kind is PacketKind.SHORT
            and r.label is Label.BENIGN)
        mine = Counter(flow.payload_dataset)
        extra = mine - truth_lens
        if extra:
            problems.append((flow.dcid.hex(), dict(extra)))
    return problems


def _build_manifest(cfg: ScenarioConfig, seed: int, schedule: BenignSchedule,
                    outcomes: list, server: ExfilServer, fixture_digest: str,
                    paths: dict, failures: list) -> dict:
    states = server.snapshot_states()
    jobs_json = []
    exfil_bytes = 0
    for out in sorted(outcomes, key=lambda o: o.flow_index):
        job = out.job
        port = job.bound_port if job.bound_port is not None else out.src_port
        state = None
        for st in states.values():
            if st.src[1] == port:
                state = st
                break
        sent_data = job.payload_source[:job.data_offset]
        received = state.data() if state else b""
        missing = sorted(state.missing_up_to(job.sent_count)) if state else []
        match = bool(state) and received == sent_data
        exfil_bytes += len(received)
        jobs_json.append({
            "flow_index": out.flow_index,
            "dcid": out.dcid.hex(),
            "packets_sent": job.sent_count,
            "data_bytes_sent": job.data_offset,
            "data_bytes_delivered": len(received),
            "chunks_delivered": len(state.chunks) if state else 0,
            "missing_seqs": missing,
            "reconstruction_digest": state.digest() if state else None,
            "sent_digest": hashlib.sha3_256(sent_data).hexdigest(),
            "slice_digest": out.slice_digest,
            "slice_fully_sent": job.data_offset == len(job.payload_source),
            "reconstruction_match": match,
            "error": out.error,
        })
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "scenario": dataclasses.asdict(cfg),
        "seed": seed,
        "counts": {
            "benign_pkts": schedule.total_outgoing_short,
            "malicious_pkts": sum(o.job.sent_count for o in outcomes),
            "benign_migrations": schedule.benign_migrations,
            "malicious_migrations": len(outcomes),
        },
        "exfil_bytes": exfil_bytes,
        "fixture_digest": fixture_digest,
        "jobs": jobs_json,
        "artifacts": paths,
        "valid": not failures,
        "failures": failures,
    }
    return manifest


def save_manifest(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"not a testbed manifest: {path}")
    return manifest


def run_experiment(cfg: ScenarioConfig, seed: int, out_dir,
                   fixture: Optional[bytes] = None,
                   n_probe: int = 150, exfil_dst_override=None,
                   dest_acknowledged: bool = False) -> RunResult:
    """Execute one full scenario and write all artifacts to out_dir."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, fname) for name, fname in (
        ("capture", "capture.pcap"), ("features_csv", "features.csv"),
        ("records", "records.jsonl"), ("run_stats", "run_stats.json"),
        ("fixture", "fixture.bin"), ("config", "scenario.ini"),
        ("manifest", "manifest.json"))}

    schedule = generate_benign_flows(cfg, seed)
    infected = plan_infections(schedule, seed)
    budgets = plan_budgets(schedule, infected)
    if fixture is None:
        fixture = derive_rng(seed, "fixture").randbytes(cfg.exfil_total_bytes)
    with open(paths["fixture"], "wb") as fh:
        fh.write(fixture)
    with open(paths["config"], "w", encoding="utf-8") as fh:
        fh.write(scenario_to_config_text(cfg))
    fixture_digest = hashlib.sha3_256(fixture).hexdigest()

    clock = RunClock()
    blacklist = Blacklist()
    observer = Observer(clock, capture_path=paths["capture"],
                        records_path=paths["records"])
    attacker = AttackerSniffer(clock, blacklist,
                               reservoir_rng=derive_rng(seed, "reservoir"))
    wire = LoopbackWire(loss_rate=cfg.loss_rate,
                        drop_salt=derive_key(seed, "drop-salt"),
                        taps=(observer.tap, attacker.tap))

    port_to_dcid = {f.src_port: f.dcid for f in schedule.flows}
    responder = BenignResponder(
        wire, cfg.server_addrs(), seed=seed,
        dcid_resolver=lambda addr: port_to_dcid.get(addr[1], b""))
    key = derive_key(seed, "exfil")
    # single-use migration destinations: fresh loopback IPs, the QUIC port
    bind_addrs = [(f"127.77.{i // 250}.{1 + i % 250}", cfg.exfil_port)
                  for i in range(max(len(infected), 1))]
    if exfil_dst_override is not None:
        # external collection server: ours stays up but receives nothing
        dst_pool = [exfil_dst_override] * len(infected)
    else:
        dst_pool = bind_addrs[:len(infected)]
    server = ExfilServer(wire, key, bind_addrs, seed=seed)

    wall_budget_s = cfg.duration_s / cfg.time_compression
    failures: list = []
    outcomes: list = []
    base_rate = None
    t_start = time.perf_counter()
    try:
        responder.start()
        server.start()
        base_rate = measure_base_rate(n_probe=n_probe)
        monitor = JobMonitor(infected, attacker, wire, clock, cfg, seed, key,
                             base_rate, blacklist, fixture, budgets,
                             deadline_s=wall_budget_s + 30.0,
                             dst_pool=dst_pool,
                             dest_acknowledged=dest_acknowledged)
        monitor.start()
        stop = threading.Event()
        _replay_schedule(schedule, wire, stop)
        monitor.join(timeout=wall_budget_s + 60.0)
        if monitor.is_alive():
            monitor.stop_event.set()
            monitor.join(timeout=10.0)
            failures.append("job monitor did not finish in time")
        outcomes = monitor.outcomes
        if monitor.skipped:
            failures.append(f"targets never launched: {monitor.skipped}")
        if not _drain_server(server, outcomes):
            failures.append("server did not process all delivered datagrams")
    except Exception as exc:
        failures.append(f"{type(exc).__name__}: {exc}")
        logger.exception("experiment failed")
    finally:
        server.stop_event.set()
        responder.stop_event.set()
        server.join(timeout=3.0)
        responder.join(timeout=3.0)
        observer.close()
    wall_s = time.perf_counter() - t_start

    rows = features_mod.extract(observer.table)
    features_mod.export_csv(rows, paths["features_csv"])
    send_log_paths = []
    for out in sorted(outcomes, key=lambda o: o.flow_index):
        p = os.path.join(out_dir, f"send_log_{out.dcid.hex()}.csv")
        write_send_log(out.job.log, p)
        send_log_paths.append(p)
    paths["send_logs"] = send_log_paths

    manifest = _build_manifest(cfg, seed, schedule, outcomes, server,
                               fixture_digest, _relative_paths(paths, out_dir),
                               failures)
    save_manifest(manifest, paths["manifest"])

    stats = {
        "wall_seconds": round(wall_s, 3),
        "base_rate": dataclasses.asdict(base_rate) if base_rate else None,
        "wire": {"sent": wire.sent, "dropped": wire.dropped},
        "attacker": attacker.summary(),
        "server": {"datagrams": server.datagrams,
                   "undecryptable": server.undecryptable,
                   "path_responses": server.path_responses,
                   "acks_sent": server.acks_sent},
        "responder_replies": responder.replies,
        "blacklist_size": len(blacklist),
        "audit_blacklist_violations": audit_blacklist_soundness(
            attacker.table, observer.table),
    }
    with open(paths["run_stats"], "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return RunResult(cfg, seed, str(out_dir), schedule, observer.table, attacker,
                     outcomes, base_rate, server, manifest, rows, paths)


def _relative_paths(paths: dict, out_dir) -> dict:
    rel = {}
    for name, value in paths.items():
        if isinstance(value, list):
            rel[name] = [os.path.basename(v) for v in value]
        else:
            rel[name] = os.path.basename(value)
    return rel


def _drain_server(server: ExfilServer, outcomes) -> bool:
    """Wait until the server has processed everything the wire delivered."""
    expected = sum(1 for out in outcomes for e in out.job.log if e.delivered)
    deadline = time.perf_counter() + DRAIN_TIMEOUT_S
    while time.perf_counter() < deadline:
        if server.datagrams >= expected:
            return True
        time.sleep(0.05)
    logger.warning("server drain timed out: %d of %d datagrams processed",
                   server.datagrams, expected)
    return False
