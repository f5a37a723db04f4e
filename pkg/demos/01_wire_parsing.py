"""Walk through the version-independent header parser.

Shows what the sniffer can and cannot learn from raw datagrams: long headers
expose both connection IDs, short headers are opaque until a registry entry
from a preceding long header supplies the DCID length.
"""

from quicmimic.wire import (CidRegistry, build_long_header, build_short_header,
                            parse_datagram, register_long_header)

registry = CidRegistry()

# A connection opens with a long header: version, both CIDs, opaque tail.
dcid, scid = bytes.fromhex("aabbccdd11223344"), bytes.fromhex("cafe01")
opening = build_long_header(1, dcid, scid, remainder=b"\x00" * 32)
parsed = parse_datagram(opening, registry)
print("long header :", parsed.kind.value,
      "dcid=", parsed.header.dcid.hex(), "scid=", parsed.header.scid.hex())

# A short header before registration cannot be decoded: where does the DCID end?
payload_packet = build_short_header(dcid, b"protected payload bytes")
print("short before registration:",
      parse_datagram(payload_packet, registry).discard_reason.value)

# After registering the long header, the same datagram decodes.
register_long_header(parsed.header, registry)
decoded = parse_datagram(payload_packet, registry)
print("short after registration :", decoded.kind.value,
      "payload_len=", len(decoded.header.payload))

# The conservative discard rules in action.
zero_dcid = bytes([0xC3]) + (1).to_bytes(4, "big") + b"\x00" + b"\x01\x99"
print("zero-length dcid         :",
      parse_datagram(zero_dcid, registry).discard_reason.value)

coalesced = build_long_header(1, dcid, scid) + opening
print("coalesced datagram       :",
      parse_datagram(coalesced, registry).discard_reason.value)

# Arbitrary bytes never crash the parser.
import random
rng = random.Random(0)
kinds = [parse_datagram(rng.randbytes(rng.randint(0, 600)), registry).kind.value
         for _ in range(10_000)]
print("10k random blobs parsed  :", {k: kinds.count(k) for k in set(kinds)})
