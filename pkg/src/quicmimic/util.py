"""Shared helpers: seeded RNG derivation, entropy, destination safety gate."""

from __future__ import annotations

import hashlib
import ipaddress
import math
import random
import time
from collections import Counter

MICROS = 1_000_000


def now_us() -> int:
    """Monotonic wall-independent timestamp in integer microseconds."""
    return time.perf_counter_ns() // 1000


def derive_rng(master_seed: int, *scope) -> random.Random:
    """Derive an independent, reproducible RNG stream for a named component.

    The scope tuple (strings/ints/bytes) keys the stream, so the draw order of
    one component never perturbs another.
    """
    h = hashlib.sha3_256()
    h.update(master_seed.to_bytes(16, "big", signed=True))
    for part in scope:
        if isinstance(part, bytes):
            h.update(b"\x00b" + part)
        else:
            h.update(b"\x00s" + str(part).encode())
    return random.Random(int.from_bytes(h.digest()[:8], "big"))


def derive_key(master_seed: int, *scope) -> bytes:
    """Derive a reproducible 256-bit key for a run component."""
    h = hashlib.sha3_256()
    h.update(b"key")
    h.update(master_seed.to_bytes(16, "big", signed=True))
    for part in scope:
        h.update(b"\x00" + str(part).encode())
    return h.digest()


def shannon_entropy(data: bytes) -> float:
    """Shannon entropy of a byte string in bits per byte (0.0 for empty input)."""
    if not data:
        return 0.0
    counts = Counter(data)
    n = len(data)
    return -sum((c / n) * math.log2(c / n) for c in counts.values())


class UnsafeDestinationError(ValueError):
    """Raised when a send target is outside loopback/private ranges."""


_RFC1918 = (
    ipaddress.ip_network("10.0.0.0/8"),
    ipaddress.ip_network("172.16.0.0/12"),
    ipaddress.ip_network("192.168.0.0/16"),
)


def check_destination(host: str, acknowledged: bool = False) -> None:
    """Refuse non-loopback, non-RFC1918 destinations unless explicitly acknowledged.

    The testbed only ever talks to addresses the operator controls; this gate is
    enforced both here and again at the CLI layer.
    """
    try:
        addr = ipaddress.ip_address(host)
    except ValueError as exc:
        raise UnsafeDestinationError(f"destination {host!r} is not an IP literal") from exc
    if addr.is_loopback:
        return
    if isinstance(addr, ipaddress.IPv4Address) and any(addr in net for net in _RFC1918):
        return
    if not acknowledged:
        raise UnsafeDestinationError(
            f"destination {host} is not loopback/RFC1918; pass the ownership "
            "acknowledgment flag only for networks you own"
        )
