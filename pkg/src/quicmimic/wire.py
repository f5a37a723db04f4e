"""Byte-exact parsing and construction of QUIC long/short headers.

Only version-independent properties are used: the header-form bit, the
version field, and the length-prefixed connection IDs of long headers.
Everything after a long header's SCID is carried as opaque bytes. Short
headers do not encode their DCID length, so decoding them requires a
:class:`CidRegistry` populated from previously observed long headers.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

FORM_BIT = 0x80  # MSB of byte 0: 1 = long header, 0 = short header
FIXED_BIT = 0x40

# src ip, dst ip, src port, dst port, proto
FlowKey = tuple


class HeaderKind(Enum):
    LONG = "long"
    SHORT = "short"
    DISCARDED = "discarded"


class DiscardReason(Enum):
    COALESCED = "coalesced"
    ZERO_LENGTH_DCID = "zero_length_dcid"
    UNKNOWN_DCID = "unknown_dcid"
    TOO_SHORT = "too_short"
    NOT_QUIC = "not_quic"


@dataclass(frozen=True)
class LongHeader:
    first_byte: int
    version: int
    dcid: bytes
    scid: bytes
    remainder: bytes = b""

    def __post_init__(self):
        if not self.first_byte & FORM_BIT:
            raise ValueError("long header requires the header-form bit set")
        if not 0 <= len(self.dcid) <= 255 or not 0 <= len(self.scid) <= 255:
            raise ValueError("connection ID length must fit in one octet")


@dataclass(frozen=True)
class ShortHeader:
    first_byte: int
    dcid: bytes
    payload: bytes = b""

    def __post_init__(self):
        if self.first_byte & FORM_BIT:
            raise ValueError("short header requires the header-form bit clear")
        if not self.dcid:
            raise ValueError("short header needs a non-empty DCID")


@dataclass(frozen=True)
class ParsedDatagram:
    kind: HeaderKind
    header: object = None  # LongHeader | ShortHeader when kind is not DISCARDED
    discard_reason: Optional[DiscardReason] = None

    def __post_init__(self):
        if self.kind is HeaderKind.DISCARDED and self.discard_reason is None:
            raise ValueError("discarded datagrams carry a reason")


@dataclass
class _RegistryEntry:
    length: int
    flow_keys: set = field(default_factory=set)
    last_seen_us: int = 0


class CidRegistry:
    """Connection IDs learned from long headers, keyed by their raw bytes.

    Lookup for a short header tries every registered DCID as a prefix of the
    datagram body. If more than one candidate matches, the observed flow key
    is used to narrow the match; any remaining ambiguity is reported as a
    failed lookup so the caller discards the datagram instead of guessing.

    Entries idle longer than ``max_idle_us`` are dropped on :meth:`expire`
    (and opportunistically on registration); a long-running sniffer must not
    grow without bound. All mutating operations are individually atomic.
    """

    def __init__(self, max_idle_us: int = 300 * 1_000_000):
        self.max_idle_us = max_idle_us
        self._entries: dict[bytes, _RegistryEntry] = {}
        self._by_length: dict[int, set] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, dcid: bytes) -> bool:
        return dcid in self._entries

    def register(self, cid: bytes, flow_key: FlowKey = None, now_us: int = 0) -> None:
        """Record a CID; re-registration refreshes the entry (idempotent)."""
        if not cid:
            raise ValueError("zero-length CIDs are discarded upstream, never registered")
        with self._lock:
            entry = self._entries.get(cid)
            if entry is None:
                entry = _RegistryEntry(length=len(cid))
                self._entries[cid] = entry
                self._by_length.setdefault(len(cid), set()).add(cid)
            entry.last_seen_us = max(entry.last_seen_us, now_us)
            if flow_key is not None:
                entry.flow_keys.add(flow_key)
            self._expire_locked(now_us)

    def length_of(self, cid: bytes) -> Optional[int]:
        entry = self._entries.get(cid)
        return entry.length if entry else None

    def resolve(self, body: bytes, flow_key: FlowKey = None, now_us: int = 0) -> Optional[bytes]:
        """Match the leading bytes of a short-header body to a registered DCID.

        Returns the matching DCID, or None when zero or several candidates
        remain after flow-key narrowing.
        """
        with self._lock:
            candidates = []
            for length, cids in self._by_length.items():
                if length <= len(body) and body[:length] in cids:
                    candidates.append(body[:length])
            if len(candidates) > 1 and flow_key is not None:
                narrowed = [c for c in candidates
                            if flow_key in self._entries[c].flow_keys]
                if narrowed:
                    candidates = narrowed
            if len(candidates) != 1:
                return None
            cid = candidates[0]
            self._entries[cid].last_seen_us = max(
                self._entries[cid].last_seen_us, now_us)
            return cid

    def expire(self, now_us: int) -> int:
        with self._lock:
            return self._expire_locked(now_us)

    def _expire_locked(self, now_us: int) -> int:
        stale = [cid for cid, e in self._entries.items()
                 if now_us - e.last_seen_us > self.max_idle_us]
        for cid in stale:
            del self._entries[cid]
            bucket = self._by_length[len(cid)]
            bucket.discard(cid)
            if not bucket:
                del self._by_length[len(cid)]
        return len(stale)


_MIN_LONG = 1 + 4 + 1 + 1  # first byte, version, dcil, scil
_MIN_SHORT = 1 + 1  # first byte plus at least one DCID byte


def parse_datagram(payload: bytes, registry: CidRegistry,
                   flow_key: FlowKey = None, now_us: int = 0) -> ParsedDatagram:
    """Classify one UDP payload as a long header, short header, or discard.

    Never raises on arbitrary input. Discard reasons follow the sniffer's
    conservative rules: coalesced datagrams, zero-length DCIDs, and short
    headers that no registry entry can decode are all dropped.
    """
    if len(payload) == 0:
        return ParsedDatagram(HeaderKind.DISCARDED, discard_reason=DiscardReason.NOT_QUIC)

    first = payload[0]
    if first & FORM_BIT:
        if len(payload) < _MIN_LONG:
            return ParsedDatagram(HeaderKind.DISCARDED, discard_reason=DiscardReason.TOO_SHORT)
        version = int.from_bytes(payload[1:5], "big")
        pos = 5
        dcil = payload[pos]
        pos += 1
        if dcil == 0:
            return ParsedDatagram(HeaderKind.DISCARDED,
                                  discard_reason=DiscardReason.ZERO_LENGTH_DCID)
        if pos + dcil + 1 > len(payload):
            return ParsedDatagram(HeaderKind.DISCARDED, discard_reason=DiscardReason.TOO_SHORT)
        dcid = payload[pos:pos + dcil]
        pos += dcil
        scil = payload[pos]
        pos += 1
        if pos + scil > len(payload):
            return ParsedDatagram(HeaderKind.DISCARDED, discard_reason=DiscardReason.TOO_SHORT)
        scid = payload[pos:pos + scil]
        pos += scil
        remainder = payload[pos:]
        # A second header form byte right after the fixed long-header fields
        # means two packets share the datagram; only the long-after-long case
        # is detectable without version knowledge.
        if remainder and remainder[0] & FORM_BIT:
            return ParsedDatagram(HeaderKind.DISCARDED, discard_reason=DiscardReason.COALESCED)
        return ParsedDatagram(HeaderKind.LONG,
                              LongHeader(first, version, dcid, scid, remainder))

    if len(payload) < _MIN_SHORT:
        return ParsedDatagram(HeaderKind.DISCARDED, discard_reason=DiscardReason.TOO_SHORT)
    dcid = registry.resolve(payload[1:], flow_key=flow_key, now_us=now_us)
    if dcid is None:
        return ParsedDatagram(HeaderKind.DISCARDED, discard_reason=DiscardReason.UNKNOWN_DCID)
    return ParsedDatagram(HeaderKind.SHORT,
                          ShortHeader(payload[0], dcid, payload[1 + len(dcid):]))


def build_short_header(dcid: bytes, payload: bytes = b"",
                       fixed_bit: bool = True, low_bits: int = 0) -> bytes:
    """Serialize a short-header datagram: form bit clear, DCID, payload."""
    if not 1 <= len(dcid) <= 255:
        raise ValueError("DCID length must be 1-255 bytes")
    first = (FIXED_BIT if fixed_bit else 0) | (low_bits & 0x3F)
    return bytes([first]) + dcid + payload


def build_long_header(version: int, dcid: bytes, scid: bytes,
                      remainder: bytes = b"", low_bits: int = 0,
                      fixed_bit: bool = True) -> bytes:
    """Serialize a long-header datagram with length-prefixed CIDs.

    A remainder starting with a form-bit byte would re-parse as a coalesced
    datagram, so it is rejected: every built datagram must round-trip.
    """
    if not 1 <= len(dcid) <= 255:
        raise ValueError("DCID length must be 1-255 bytes")
    if len(scid) > 255:
        raise ValueError("SCID length must fit in one octet")
    if remainder and remainder[0] & FORM_BIT:
        raise ValueError("remainder must not begin with a header-form byte")
    first = FORM_BIT | (FIXED_BIT if fixed_bit else 0) | (low_bits & 0x3F)
    return (bytes([first]) + version.to_bytes(4, "big")
            + bytes([len(dcid)]) + dcid + bytes([len(scid)]) + scid + remainder)


def register_long_header(header: LongHeader, registry: CidRegistry,
                         flow_key: FlowKey = None, now_us: int = 0) -> CidRegistry:
    """Store both CIDs of a parsed long header so later short headers decode.

    Zero-length SCIDs are legal on the wire but carry nothing a short header
    could ever reference, so they are skipped.
    """
    registry.register(header.dcid, flow_key=flow_key, now_us=now_us)
    if header.scid:
        registry.register(header.scid, flow_key=flow_key, now_us=now_us)
    return registry
