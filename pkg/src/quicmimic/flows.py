"""Per-flow traffic state: timestamps, benign payload-length datasets,
migration events, and retirement detection.

Flows are keyed by DCID. The benign payload-length dataset of a flow is the
multiset the mimicry engine later samples from; it only ever contains lengths
of benign outgoing short-header packets.
"""

from __future__ import annotations

import errno
import logging
import socket
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

logger = logging.getLogger(__name__)

DEFAULT_IDLE_RETIREMENT_US = 60 * 1_000_000
DEFAULT_DATASET_CAP = 10_000
DEFAULT_MIN_DATASET = 1_000


class PacketKind(Enum):
    LONG = "long"
    SHORT = "short"


class Direction(Enum):
    OUTGOING = "out"
    INCOMING = "in"


class Label(Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"


class ProbeResult(Enum):
    REBOUND = "rebound"          # bind succeeded: the source port was free
    IN_USE = "in_use"            # still bound by the original endpoint
    PERMISSION_DENIED = "permission_denied"


@dataclass
class PacketRecord:
    ts_us: int
    five_tuple: tuple  # (src ip, dst ip, src port, dst port, "udp")
    dcid: bytes
    payload_len: int
    kind: PacketKind
    direction: Direction
    label: Label
    is_migration: bool = False  # set on ingest when the destination changes

    @property
    def dst(self) -> tuple:
        return (self.five_tuple[1], self.five_tuple[3])

    @property
    def src_port(self) -> int:
        return self.five_tuple[2]


@dataclass
class FlowState:
    dcid: bytes
    records: list = field(default_factory=list)
    payload_dataset: list = field(default_factory=list)  # benign outgoing lengths
    dataset_total: int = 0  # appends seen, independent of the reservoir cap
    retired: bool = False
    retired_at_us: Optional[int] = None
    migration_events: list = field(default_factory=list)  # (ts, old dst, new dst)
    _last_out_dst: Optional[tuple] = None

    def last_ts_us(self) -> Optional[int]:
        return self.records[-1].ts_us if self.records else None

    def outgoing_short_timestamps(self) -> list:
        return [r.ts_us for r in self.records
                if r.direction is Direction.OUTGOING and r.kind is PacketKind.SHORT]

    def eligible(self, min_dataset: int = DEFAULT_MIN_DATASET) -> bool:
        return self.dataset_total >= min_dataset


class FlowTable:
    """Shared flow state, safe for one ingest context and many readers.

    ``payload_dataset`` uses reservoir sampling once a flow exceeds
    ``dataset_cap`` appends, bounding memory on long runs without skewing the
    empirical length distribution.
    """

    def __init__(self, dataset_cap: int = DEFAULT_DATASET_CAP, reservoir_rng=None):
        self.dataset_cap = dataset_cap
        self._reservoir_rng = reservoir_rng
        self.flows: dict[bytes, FlowState] = {}
        self.dropped_unknown_dcid = 0
        self.probe_errors = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.flows)

    def get(self, dcid: bytes) -> Optional[FlowState]:
        return self.flows.get(dcid)

    def ingest(self, record: PacketRecord) -> Optional[FlowState]:
        """Append a record to its flow; returns the flow, or None if dropped.

        Short-header records for a DCID with no preceding long header cannot
        be mapped to a handshake and are dropped (counted). Benign outgoing
        short records extend the flow's payload-length dataset. A change of
        destination between consecutive outgoing packets is recorded as a
        migration event and flagged on the record.
        """
        with self._lock:
            flow = self.flows.get(record.dcid)
            if flow is None:
                if record.kind is PacketKind.SHORT:
                    self.dropped_unknown_dcid += 1
                    return None
                flow = FlowState(dcid=record.dcid)
                self.flows[record.dcid] = flow
            flow.records.append(record)

            if record.direction is Direction.OUTGOING and record.kind is PacketKind.SHORT:
                if flow._last_out_dst is not None and record.dst != flow._last_out_dst:
                    record.is_migration = True
                    flow.migration_events.append(
                        (record.ts_us, flow._last_out_dst, record.dst))
                flow._last_out_dst = record.dst
                if record.label is Label.BENIGN:
                    self._append_length(flow, record.payload_len)
            return flow

    def _append_length(self, flow: FlowState, length: int) -> None:
        flow.dataset_total += 1
        if len(flow.payload_dataset) < self.dataset_cap:
            flow.payload_dataset.append(length)
        else:
            rng = self._reservoir_rng
            if rng is None:
                return  # capped without replacement when no RNG was supplied
            j = rng.randrange(flow.dataset_total)
            if j < self.dataset_cap:
                flow.payload_dataset[j] = length

    def record_migration(self, dcid: bytes, new_dst: tuple, ts_us: int) -> FlowState:
        """Explicitly note a destination change for a flow (ground-truth path)."""
        with self._lock:
            flow = self.flows.setdefault(dcid, FlowState(dcid=dcid))
            old = flow._last_out_dst
            flow.migration_events.append((ts_us, old, new_dst))
            flow._last_out_dst = new_dst
            return flow

    def snapshot_flows(self) -> list:
        with self._lock:
            return list(self.flows.values())

    def compute_time_deltas(self) -> dict:
        """Inter-send deltas of outgoing short-header packets, per DCID.

        Timestamps are sorted per flow first, so ingest order does not matter.
        Flows with fewer than two timestamps have no entry.
        """
        with self._lock:
            flows = list(self.flows.values())
        table: dict[bytes, list] = {}
        for flow in flows:
            ts = sorted(flow.outgoing_short_timestamps())
            if len(ts) > 1:
                table[flow.dcid] = [ts[i + 1] - ts[i] for i in range(len(ts) - 1)]
        return table

    def detect_retirement(self, flow: FlowState, probe: Optional[ProbeResult] = None,
                          now_us: Optional[int] = None,
                          idle_threshold_us: int = DEFAULT_IDLE_RETIREMENT_US) -> bool:
        """Decide whether a flow's connection has been retired.

        A successful source-port rebind probe is direct evidence; otherwise an
        idle gap beyond the threshold retires the flow (the only signal
        available when replaying captures). A probe that failed for lack of
        privilege is reported distinctly and leaves the flow live.
        """
        if flow.retired:
            return True
        retired = False
        if probe is ProbeResult.REBOUND:
            retired = True
        elif probe is ProbeResult.PERMISSION_DENIED:
            self.probe_errors += 1
            logger.warning("rebind probe lacked privilege for flow %s; flow stays live",
                           flow.dcid.hex())
        if not retired and now_us is not None:
            last = flow.last_ts_us()
            if last is not None and now_us - last > idle_threshold_us:
                retired = True
        if retired:
            with self._lock:
                if not flow.retired:
                    flow.retired = True
                    flow.retired_at_us = now_us
        return retired


def probe_rebind(port: int, host: str = "127.0.0.1") -> ProbeResult:
    """Check whether the UDP source port of a flow can be re-bound.

    A successful bind means the original socket is gone, i.e. the connection
    that used it has been retired. The probe socket is closed immediately.
    """
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind((host, port))
        return ProbeResult.REBOUND
    except PermissionError:
        return ProbeResult.PERMISSION_DENIED
    except OSError as exc:
        if exc.errno in (errno.EADDRINUSE, errno.EACCES):
            return (ProbeResult.IN_USE if exc.errno == errno.EADDRINUSE
                    else ProbeResult.PERMISSION_DENIED)
        raise
    finally:
        sock.close()
