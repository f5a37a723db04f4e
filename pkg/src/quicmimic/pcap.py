"""Classic packet-capture file support (the 24-byte-header, microsecond
format) with Ethernet/IPv4/UDP encapsulation, plus the replay-ingest
pipeline that turns a capture into a flow table.

Only IPv4 is decapsulated; IPv6 frames are rejected with a clear message and
fragmented IP is skipped, both by design.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field

from .flows import (DEFAULT_IDLE_RETIREMENT_US, Direction, FlowTable, Label,
                    PacketKind, PacketRecord)
from .wire import CidRegistry, DiscardReason, HeaderKind, parse_datagram, register_long_header

MAGIC_US = 0xA1B2C3D4
MAGIC_US_SWAPPED = 0xD4C3B2A1
LINKTYPE_ETHERNET = 1

_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_IPV6 = 0x86DD

_SRC_MAC = bytes.fromhex("020000000001")
_DST_MAC = bytes.fromhex("020000000002")


class PcapFormatError(ValueError):
    """Capture file is not in the supported classic format."""


@dataclass
class CapturedPacket:
    ts_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    payload: bytes

    @property
    def five_tuple(self) -> tuple:
        return (self.src_ip, self.dst_ip, self.src_port, self.dst_port, "udp")


def _ipv4_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) + header[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


class PcapWriter:
    """Write UDP datagrams as Ethernet/IPv4/UDP frames analyzers can open."""

    def __init__(self, path):
        self._fh = open(path, "wb")
        self._fh.write(struct.pack("<IHHiIII", MAGIC_US, 2, 4, 0, 0, 65535,
                                   LINKTYPE_ETHERNET))
        self._ip_id = 0

    def write(self, ts_us: int, src: tuple, dst: tuple, payload: bytes) -> None:
        frame = self._frame(src, dst, payload)
        self._fh.write(struct.pack("<IIII", ts_us // 1_000_000, ts_us % 1_000_000,
                                   len(frame), len(frame)))
        self._fh.write(frame)

    def _frame(self, src: tuple, dst: tuple, payload: bytes) -> bytes:
        src_ip, src_port = src
        dst_ip, dst_port = dst
        udp = struct.pack(">HHHH", src_port, dst_port, 8 + len(payload), 0) + payload
        self._ip_id = (self._ip_id + 1) & 0xFFFF
        ip_wo_sum = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(udp), self._ip_id,
                                0, 64, 17, 0,
                                _inet_aton(src_ip), _inet_aton(dst_ip))
        checksum = _ipv4_checksum(ip_wo_sum)
        ip = ip_wo_sum[:10] + struct.pack(">H", checksum) + ip_wo_sum[12:]
        eth = _DST_MAC + _SRC_MAC + struct.pack(">H", _ETHERTYPE_IPV4)
        return eth + ip + udp

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _inet_aton(ip: str) -> bytes:
    parts = [int(p) for p in ip.split(".")]
    if len(parts) != 4 or any(not 0 <= p <= 255 for p in parts):
        raise ValueError(f"bad IPv4 address {ip!r}")
    return bytes(parts)


def _inet_ntoa(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def read_capture(path):
    """Yield (ts_us, frame bytes) records from a classic capture file.

    Both native and byte-swapped magic are accepted; anything else is a
    format error. A truncated trailing record ends iteration.
    """
    with open(path, "rb") as fh:
        head = fh.read(24)
        if len(head) < 24:
            raise PcapFormatError("file too short for a capture global header")
        magic_be = struct.unpack(">I", head[:4])[0]
        if magic_be == MAGIC_US:
            order = ">"
        elif magic_be == MAGIC_US_SWAPPED:
            order = "<"
        else:
            raise PcapFormatError(f"unrecognized capture magic 0x{magic_be:08X}")
        _maj, _min, _zone, _sig, _snap, network = struct.unpack(order + "HHiIII", head[4:])
        if network != LINKTYPE_ETHERNET:
            raise PcapFormatError(f"unsupported link type {network} (Ethernet only)")
        while True:
            rec = fh.read(16)
            if len(rec) < 16:
                return
            sec, usec, incl, _orig = struct.unpack(order + "IIII", rec)
            data = fh.read(incl)
            if len(data) < incl:
                return
            yield sec * 1_000_000 + usec, data


@dataclass
class DecapStats:
    frames: int = 0
    non_ipv4: int = 0
    fragments: int = 0
    non_udp: int = 0
    port_filtered: int = 0


def iter_udp(path, port: int = 443, stats: DecapStats = None,
             allow_any_port: bool = False):
    """Decapsulate Ethernet/IPv4/UDP and yield CapturedPacket for one port.

    Datagrams are kept when either UDP port matches ``port`` (or always, with
    ``allow_any_port``). IPv6 is rejected outright rather than silently
    skipped.
    """
    stats = stats if stats is not None else DecapStats()
    for ts_us, frame in read_capture(path):
        stats.frames += 1
        if len(frame) < 14:
            stats.non_ipv4 += 1
            continue
        ethertype = struct.unpack(">H", frame[12:14])[0]
        if ethertype == _ETHERTYPE_IPV6:
            raise PcapFormatError(
                "capture contains IPv6 frames; only IPv4 decapsulation is supported")
        if ethertype != _ETHERTYPE_IPV4:
            stats.non_ipv4 += 1
            continue
        ip = frame[14:]
        if len(ip) < 20 or ip[0] >> 4 != 4:
            stats.non_ipv4 += 1
            continue
        ihl = (ip[0] & 0x0F) * 4
        flags_frag = struct.unpack(">H", ip[6:8])[0]
        if flags_frag & 0x1FFF or flags_frag & 0x2000:
            stats.fragments += 1
            continue
        if ip[9] != 17:
            stats.non_udp += 1
            continue
        src_ip = _inet_ntoa(ip[12:16])
        dst_ip = _inet_ntoa(ip[16:20])
        udp = ip[ihl:]
        if len(udp) < 8:
            stats.non_udp += 1
            continue
        sport, dport, ulen, _sum = struct.unpack(">HHHH", udp[:8])
        payload = udp[8:ulen] if ulen >= 8 else b""
        if not allow_any_port and sport != port and dport != port:
            stats.port_filtered += 1
            continue
        yield CapturedPacket(ts_us, src_ip, dst_ip, sport, dport, payload)


@dataclass
class IngestResult:
    table: FlowTable
    registry: CidRegistry
    decap: DecapStats
    discards: dict = field(default_factory=dict)
    packets_ingested: int = 0
    last_ts_us: int = 0

    def summary(self) -> dict:
        return {
            "flows": len(self.table),
            "packets_ingested": self.packets_ingested,
            "frames": self.decap.frames,
            "port_filtered": self.decap.port_filtered,
            "fragments_skipped": self.decap.fragments,
            "non_udp": self.decap.non_udp,
            "discards": dict(self.discards),
            "dropped_unknown_dcid": self.table.dropped_unknown_dcid,
            "retired_flows": sum(1 for f in self.table.snapshot_flows() if f.retired),
        }


def ingest_capture(path, port: int = 443, local_net=None,
                   idle_threshold_us: int = DEFAULT_IDLE_RETIREMENT_US) -> IngestResult:
    """Replay a capture into a fresh flow table.

    Direction is inferred per datagram: with ``local_net`` (an
    ipaddress network), outgoing means the source address is inside it;
    otherwise a datagram headed for the filter port counts as outgoing.
    Retirement is inferred from idle gaps only, since no live socket exists
    to probe.
    """
    registry = CidRegistry()
    table = FlowTable()
    result = IngestResult(table=table, registry=registry, decap=DecapStats())
    discards = {reason.value: 0 for reason in DiscardReason}

    for pkt in iter_udp(path, port=port, stats=result.decap):
        result.last_ts_us = max(result.last_ts_us, pkt.ts_us)
        parsed = parse_datagram(pkt.payload, registry, flow_key=pkt.five_tuple,
                                now_us=pkt.ts_us)
        if parsed.kind is HeaderKind.DISCARDED:
            discards[parsed.discard_reason.value] += 1
            continue
        if local_net is not None:
            outgoing = ipaddress.ip_address(pkt.src_ip) in local_net
        else:
            outgoing = pkt.dst_port == port
        direction = Direction.OUTGOING if outgoing else Direction.INCOMING
        if parsed.kind is HeaderKind.LONG:
            register_long_header(parsed.header, registry, flow_key=pkt.five_tuple,
                                 now_us=pkt.ts_us)
            record = PacketRecord(pkt.ts_us, pkt.five_tuple, parsed.header.dcid,
                                  len(parsed.header.remainder), PacketKind.LONG,
                                  direction, Label.BENIGN)
        else:
            record = PacketRecord(pkt.ts_us, pkt.five_tuple, parsed.header.dcid,
                                  len(parsed.header.payload), PacketKind.SHORT,
                                  direction, Label.BENIGN)
        if table.ingest(record) is not None:
            result.packets_ingested += 1

    for flow in table.snapshot_flows():
        table.detect_retirement(flow, now_us=result.last_ts_us,
                                idle_threshold_us=idle_threshold_us)
    result.discards = discards
    return result
