"""Header parsing/construction: field layout, discard rules, round trips."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quicmimic.wire import (CidRegistry, DiscardReason, HeaderKind,
                            build_long_header, build_short_header,
                            parse_datagram, register_long_header)

DCID = bytes.fromhex("aabbccdd")
SCID = bytes.fromhex("1122")


def make_long(version=1, dcid=DCID, scid=SCID, remainder=b"\x01\x02", first=0xC3):
    return (bytes([first]) + version.to_bytes(4, "big")
            + bytes([len(dcid)]) + dcid + bytes([len(scid)]) + scid + remainder)


def test_long_header_field_layout():
    parsed = parse_datagram(make_long(), CidRegistry())
    assert parsed.kind is HeaderKind.LONG
    assert parsed.header.version == 1
    assert parsed.header.dcid == DCID
    assert parsed.header.scid == SCID
    assert parsed.header.remainder == b"\x01\x02"
    assert parsed.header.first_byte == 0xC3


def test_short_header_needs_registry_entry():
    registry = CidRegistry()
    payload = b"\x43" + DCID + b"rest of the payload"
    assert parse_datagram(payload, registry).discard_reason is DiscardReason.UNKNOWN_DCID
    registry.register(DCID)
    parsed = parse_datagram(payload, registry)
    assert parsed.kind is HeaderKind.SHORT
    assert parsed.header.dcid == DCID
    assert parsed.header.payload == b"rest of the payload"


def test_zero_length_dcid_discarded():
    payload = bytes([0xC3]) + (1).to_bytes(4, "big") + b"\x00" + b"\x02" + SCID
    parsed = parse_datagram(payload, CidRegistry())
    assert parsed.kind is HeaderKind.DISCARDED
    assert parsed.discard_reason is DiscardReason.ZERO_LENGTH_DCID


def test_empty_datagram_is_not_quic():
    parsed = parse_datagram(b"", CidRegistry())
    assert parsed.discard_reason is DiscardReason.NOT_QUIC


@pytest.mark.parametrize("cut", [1, 3, 5, 6, 9, 10])
def test_truncated_long_header_too_short(cut):
    parsed = parse_datagram(make_long(remainder=b"")[:cut], CidRegistry())
    assert parsed.discard_reason is DiscardReason.TOO_SHORT


def test_single_byte_short_header_too_short():
    assert parse_datagram(b"\x43", CidRegistry()).discard_reason is DiscardReason.TOO_SHORT


def test_coalesced_long_headers_discarded():
    second = make_long()
    payload = make_long(remainder=b"") + second
    parsed = parse_datagram(payload, CidRegistry())
    assert parsed.discard_reason is DiscardReason.COALESCED


def test_first_byte_classification_uses_only_the_form_bit():
    registry = CidRegistry()
    registry.register(DCID)
    for low in (0x00, 0x3F, 0x40, 0x7F):
        parsed = parse_datagram(bytes([low]) + DCID + b"x", registry)
        assert parsed.kind is HeaderKind.SHORT
    for low in (0x80, 0xC0, 0xFF):
        parsed = parse_datagram(bytes([low]) + make_long()[1:], registry)
        assert parsed.kind is not HeaderKind.SHORT


def test_build_short_header_layout():
    datagram = build_short_header(DCID, b"\x01", fixed_bit=True)
    assert datagram == b"\x40" + DCID + b"\x01"


def test_build_short_header_max_dcid_length():
    datagram = build_short_header(b"\xab" * 255, b"")
    assert len(datagram) == 256


@pytest.mark.parametrize("dcid", [b"", b"x" * 256])
def test_build_short_header_rejects_bad_dcid(dcid):
    with pytest.raises(ValueError):
        build_short_header(dcid, b"payload")


def test_build_long_header_rejects_ambiguous_remainder():
    with pytest.raises(ValueError):
        build_long_header(1, DCID, SCID, b"\x80tail")


def test_register_long_header_is_idempotent():
    registry = CidRegistry()
    parsed = parse_datagram(make_long(), CidRegistry())
    register_long_header(parsed.header, registry)
    register_long_header(parsed.header, registry)
    assert len(registry) == 2  # DCID and SCID once each
    assert registry.length_of(DCID) == len(DCID)
    assert registry.length_of(SCID) == len(SCID)


def test_registered_short_header_parses_after_long():
    registry = CidRegistry()
    parsed = parse_datagram(make_long(), registry)
    register_long_header(parsed.header, registry)
    short = build_short_header(DCID, b"data")
    assert parse_datagram(short, registry).kind is HeaderKind.SHORT


def test_prefix_collision_without_flow_key_is_discarded():
    # one registered CID is a strict prefix of another: ambiguous on its own
    registry = CidRegistry()
    key_a = ("10.0.0.1", "10.0.0.2", 1111, 443, "udp")
    key_b = ("10.0.0.3", "10.0.0.2", 2222, 443, "udp")
    registry.register(DCID, flow_key=key_a)
    registry.register(DCID + b"\xee\xff", flow_key=key_b)
    datagram = build_short_header(DCID + b"\xee\xff", b"tail")

    unknown_key = ("10.9.9.9", "10.0.0.2", 3333, 443, "udp")
    parsed = parse_datagram(datagram, registry, flow_key=unknown_key)
    assert parsed.discard_reason is DiscardReason.UNKNOWN_DCID

    parsed = parse_datagram(datagram, registry, flow_key=key_b)
    assert parsed.kind is HeaderKind.SHORT
    assert parsed.header.dcid == DCID + b"\xee\xff"


def test_registry_eviction_after_idle():
    registry = CidRegistry(max_idle_us=1_000_000)
    registry.register(DCID, now_us=0)
    assert registry.expire(now_us=500_000) == 0
    assert registry.expire(now_us=2_000_000) == 1
    assert DCID not in registry


def test_zero_length_scid_parses_but_is_not_registered():
    payload = make_long(scid=b"")
    registry = CidRegistry()
    parsed = parse_datagram(payload, registry)
    assert parsed.kind is HeaderKind.LONG
    assert parsed.header.scid == b""
    register_long_header(parsed.header, registry)
    assert len(registry) == 1


# -- properties --------------------------------------------------------------

cids = st.binary(min_size=1, max_size=255)
payloads = st.binary(max_size=1400)


@given(dcid=cids, payload=payloads)
@settings(max_examples=200, deadline=None)
def test_short_header_round_trip(dcid, payload):
    registry = CidRegistry()
    registry.register(dcid)
    parsed = parse_datagram(build_short_header(dcid, payload), registry)
    assert parsed.kind is HeaderKind.SHORT
    assert parsed.header.dcid == dcid
    assert parsed.header.payload == payload


@given(version=st.integers(0, 2**32 - 1), dcid=cids,
       scid=st.binary(max_size=255), remainder=payloads,
       low=st.integers(0, 0x3F))
@settings(max_examples=200, deadline=None)
def test_long_header_round_trip(version, dcid, scid, remainder, low):
    if remainder and remainder[0] & 0x80:
        remainder = bytes([remainder[0] & 0x7F]) + remainder[1:]
    datagram = build_long_header(version, dcid, scid, remainder, low_bits=low)
    parsed = parse_datagram(datagram, CidRegistry())
    assert parsed.kind is HeaderKind.LONG
    assert (parsed.header.version, parsed.header.dcid, parsed.header.scid,
            parsed.header.remainder) == (version, dcid, scid, remainder)


def test_fuzz_parser_totality_quick():
    rng = random.Random(0xF00D)
    registry = CidRegistry()
    registry.register(DCID)
    for _ in range(10_000):
        blob = rng.randbytes(rng.randint(0, 1400))
        parse_datagram(blob, registry)  # must never raise
