"""Scenario configuration and the deterministic benign-traffic generator.

A scenario describes a small population of QUIC-like flows: how many, which
traffic class each belongs to (bulk transfer, acknowledgment-dominated, or
sparse keepalive), the payload-length and inter-send-delta distributions per
class, and how often flows migrate to a secondary server address. Distances
in time are expressed at real-world scale and divided by a compression
factor so day-long scenarios replay in minutes.

``generate_benign_flows`` is pure: the same (config, seed) pair always yields
the same schedule, byte-for-byte, including every datagram's content.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .util import derive_rng
from .wire import build_long_header, build_short_header

MICROS = 1_000_000


# -- distribution DSL -------------------------------------------------------
#
# "const:V"            always V
# "uniform:LO:HI"      integer uniform, inclusive
# "expo:MEAN"          exponential with the given mean (floats allowed)
# "mix:W~SPEC|W~SPEC"  weighted mixture of sub-specs

def sample_dist(spec: str, rng) -> float:
    kind, _, rest = spec.partition(":")
    if kind == "const":
        return float(rest)
    if kind == "uniform":
        lo, hi = rest.split(":")
        return rng.randint(int(lo), int(hi))
    if kind == "expo":
        return rng.expovariate(1.0 / float(rest))
    if kind == "mix":
        parts = []
        weights = []
        for term in rest.split("|"):
            w, _, sub = term.partition("~")
            weights.append(float(w))
            parts.append(sub)
        return sample_dist(rng.choices(parts, weights=weights, k=1)[0], rng)
    raise ValueError(f"unknown distribution spec {spec!r}")


@dataclass
class ScenarioConfig:
    name: str = "custom"
    flow_count: int = 8
    duration_s: float = 600.0           # scenario-scale duration
    time_compression: float = 20.0      # real intervals divided by this
    infected_flow_fraction: float = 0.25
    benign_migration_interval_s: tuple = (0.0, 1800.0)  # uniform range, scenario scale
    # traffic classes: name -> weight; each class has a length and delta spec
    class_weights: dict = field(default_factory=lambda: {"bulk": 0.5, "ack": 0.5})
    len_dists: dict = field(default_factory=lambda: {
        "bulk": "mix:0.75~const:1350|0.20~uniform:400:1349|0.05~uniform:30:60",
        "ack": "uniform:28:64",
        "keepalive": "uniform:24:48",
    })
    delta_dists: dict = field(default_factory=lambda: {   # seconds, scenario scale
        "bulk": "expo:0.10",
        "ack": "expo:0.30",
        "keepalive": "expo:10.0",
    })
    lifetime_frac: tuple = (0.55, 0.90)          # of duration, uninfected flows
    infected_lifetime_frac: tuple = (0.35, 0.50)  # infected flows retire early
    start_stagger_frac: float = 0.10
    eligibility_min_packets: int = 1000
    anomaly_share: float = 0.03          # target malicious fraction of outgoing packets
    budget_mode: str = "share"           # "share" or "fixture"
    exfil_total_bytes: int = 262_144
    loss_rate: float = 0.0
    mimic_timing: bool = True
    fresh_dcid: bool = False
    dcid_len: int = 8
    scid_len: int = 8
    probe_payload_len: int = 1350
    quic_port: int = 14433
    server_address_count: int = 4        # benign server IPs usable as migration targets
    exfil_port: int = 14433              # same port as benign QUIC: just another "server"
    src_port_base: int = 15000
    long_header_payload_len: int = 1200

    def server_addrs(self) -> list:
        # distinct loopback IPs on one port: migrations change the IP, like a
        # preferred-address move, so a single-port capture filter still sees them
        return [(f"127.0.{i}.1", self.quic_port)
                for i in range(self.server_address_count)]

    def validate(self) -> None:
        if self.flow_count < 1:
            raise ValueError("flow_count must be at least 1")
        for frac in (self.infected_flow_fraction, self.anomaly_share, self.loss_rate):
            if not 0.0 <= frac <= 1.0:
                raise ValueError("fractions must lie in [0, 1]")
        if self.budget_mode not in ("share", "fixture"):
            raise ValueError("budget_mode must be 'share' or 'fixture'")
        lo, hi = self.benign_migration_interval_s
        if lo < 0 or hi < lo:
            raise ValueError("benign_migration_interval_s must be a non-negative range")


def mixed_scenario(**overrides) -> ScenarioConfig:
    """General browsing-style mix of bulk and acknowledgment flows."""
    cfg = ScenarioConfig(name="mixed",
                         benign_migration_interval_s=(30.0, 240.0))
    return dataclasses.replace(cfg, **overrides)


def streaming_scenario(**overrides) -> ScenarioConfig:
    """Video-style traffic: predominantly small outgoing acknowledgments."""
    cfg = ScenarioConfig(name="streaming",
                         class_weights={"ack": 0.9, "bulk": 0.1},
                         benign_migration_interval_s=(20.0, 180.0))
    return dataclasses.replace(cfg, **overrides)


def noise_scenario(**overrides) -> ScenarioConfig:
    """Idle background: sparse keepalives from a few open connections."""
    cfg = ScenarioConfig(name="noise", flow_count=6,
                         class_weights={"keepalive": 1.0},
                         benign_migration_interval_s=(120.0, 600.0),
                         eligibility_min_packets=40,
                         anomaly_share=0.03)
    return dataclasses.replace(cfg, **overrides)


def demo_scenario(**overrides) -> ScenarioConfig:
    """Single fast bulk flow for the end-to-end exfiltration demo."""
    cfg = ScenarioConfig(name="demo", flow_count=1, duration_s=120.0,
                         time_compression=8.0, infected_flow_fraction=1.0,
                         class_weights={"bulk": 1.0},
                         delta_dists={"bulk": "expo:0.03",
                                      "ack": "expo:0.30",
                                      "keepalive": "expo:10.0"},
                         infected_lifetime_frac=(0.55, 0.65),
                         benign_migration_interval_s=(10.0, 40.0),
                         budget_mode="fixture",
                         exfil_total_bytes=65_536)
    return dataclasses.replace(cfg, **overrides)


PRESETS = {
    "mixed": mixed_scenario,
    "streaming": streaming_scenario,
    "noise": noise_scenario,
    "demo": demo_scenario,
}


_TUPLE_FIELDS = ("benign_migration_interval_s", "lifetime_frac", "infected_lifetime_frac")
_DICT_FIELDS = ("class_weights", "len_dists", "delta_dists")


def scenario_to_config_text(cfg: ScenarioConfig) -> str:
    """Render a scenario as the documented key-value configuration format."""
    lines = ["[scenario]"]
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _TUPLE_FIELDS:
            value = f"{value[0]}:{value[1]}"
        elif f.name in _DICT_FIELDS:
            value = ", ".join(f"{k}={v}" for k, v in value.items())
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_scenario_config(path) -> ScenarioConfig:
    """Parse the key-value configuration format back into a ScenarioConfig."""
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section("scenario"):
        raise ValueError("configuration file needs a [scenario] section")
    raw = dict(parser.items("scenario"))
    kwargs = {}
    for f in dataclasses.fields(ScenarioConfig):
        if f.name not in raw:
            continue
        text = raw[f.name]
        if f.name in _TUPLE_FIELDS:
            lo, hi = text.split(":")
            kwargs[f.name] = (float(lo), float(hi))
        elif f.name in _DICT_FIELDS:
            entries = {}
            for item in text.split(","):
                k, _, v = item.strip().partition("=")
                entries[k.strip()] = (float(v) if f.name == "class_weights" else v.strip())
            kwargs[f.name] = entries
        elif f.type in ("int",):
            kwargs[f.name] = int(text)
        elif f.type in ("float",):
            kwargs[f.name] = float(text)
        elif f.type in ("bool",):
            kwargs[f.name] = text.strip().lower() in ("1", "true", "yes", "on")
        else:
            kwargs[f.name] = text
    cfg = ScenarioConfig(**kwargs)
    cfg.validate()
    return cfg


# -- schedule generation -----------------------------------------------------

@dataclass
class ScheduledSend:
    ts_us: int            # compressed virtual time from run start
    flow_index: int
    dcid: bytes
    src: tuple            # (ip, port)
    dst: tuple
    datagram: bytes
    kind: str             # "long" | "payload" | "probe"
    payload_len: int      # QUIC payload length (after the DCID for short headers)
    is_migration: bool = False


@dataclass
class FlowPlan:
    index: int
    dcid: bytes
    scid: bytes
    src_port: int
    traffic_class: str
    start_us: int
    end_us: int
    events: list = field(default_factory=list)

    @property
    def outgoing_short_count(self) -> int:
        return sum(1 for e in self.events if e.kind != "long")

    def payload_lengths(self) -> list:
        return [e.payload_len for e in self.events if e.kind != "long"]


@dataclass
class BenignSchedule:
    config: ScenarioConfig
    seed: int
    flows: list
    benign_migrations: int

    @property
    def total_outgoing_short(self) -> int:
        return sum(f.outgoing_short_count for f in self.flows)

    def merged_events(self) -> list:
        events = [e for f in self.flows for e in f.events]
        events.sort(key=lambda e: (e.ts_us, e.flow_index))
        return events


def generate_benign_flows(cfg: ScenarioConfig, seed: int) -> BenignSchedule:
    """Produce the full benign datagram schedule for a scenario.

    Deterministic under (cfg, seed): flow classes, connection IDs, payload
    bytes, send times, and migration times all derive from seeded RNG streams
    keyed per flow, so the emitted stream is reproducible byte-for-byte.
    """
    cfg.validate()
    class_rng = derive_rng(seed, "classes")
    names = list(cfg.class_weights)
    weights = [cfg.class_weights[n] for n in names]
    assignments = class_rng.choices(names, weights=weights, k=cfg.flow_count)

    client_ip = "127.0.0.1"
    addrs = cfg.server_addrs()
    comp = cfg.time_compression
    migrations = 0
    flows = []

    for i in range(cfg.flow_count):
        rng = derive_rng(seed, "flow", i)
        dcid = rng.randbytes(cfg.dcid_len)
        scid = rng.randbytes(cfg.scid_len)
        src_port = cfg.src_port_base + i
        cls = assignments[i]

        start_s = rng.uniform(0, cfg.start_stagger_frac * cfg.duration_s)
        frac_lo, frac_hi = cfg.lifetime_frac
        lifetime_s = rng.uniform(frac_lo, frac_hi) * cfg.duration_s
        end_s = min(start_s + lifetime_s, cfg.duration_s)

        # migration instants, scenario scale
        mig_lo, mig_hi = cfg.benign_migration_interval_s
        mig_times = []
        t = start_s
        while True:
            t += rng.uniform(mig_lo, mig_hi)
            if t >= end_s or mig_hi <= 0:
                break
            mig_times.append(t)

        plan = FlowPlan(index=i, dcid=dcid, scid=scid, src_port=src_port,
                        traffic_class=cls,
                        start_us=int(start_s / comp * MICROS),
                        end_us=int(end_s / comp * MICROS))
        src = (client_ip, src_port)
        dst = addrs[0]

        first_remainder = bytearray(rng.randbytes(cfg.long_header_payload_len))
        first_remainder[0] &= 0x3F  # keep the opening datagram un-coalesced
        long_dgram = build_long_header(1, dcid, scid, bytes(first_remainder),
                                       low_bits=rng.randrange(0x40))
        plan.events.append(ScheduledSend(plan.start_us, i, dcid, src, dst,
                                         long_dgram, "long", len(first_remainder)))

        mig_iter = iter(mig_times)
        next_mig = next(mig_iter, None)
        dst_idx = 0
        t = start_s
        while True:
            t += sample_dist(cfg.delta_dists[cls], rng)
            if t >= end_s:
                break
            while next_mig is not None and next_mig <= t:
                dst_idx = (dst_idx + 1) % len(addrs)
                dst = addrs[dst_idx]
                probe_payload = rng.randbytes(cfg.probe_payload_len)
                probe = build_short_header(dcid, probe_payload, fixed_bit=True,
                                           low_bits=rng.randrange(0x40))
                plan.events.append(ScheduledSend(int(next_mig / comp * MICROS), i,
                                                 dcid, src, dst, probe, "probe",
                                                 cfg.probe_payload_len,
                                                 is_migration=True))
                migrations += 1
                next_mig = next(mig_iter, None)
            length = int(sample_dist(cfg.len_dists[cls], rng))
            payload = rng.randbytes(length)
            dgram = build_short_header(dcid, payload, fixed_bit=True,
                                       low_bits=rng.randrange(0x40))
            plan.events.append(ScheduledSend(int(t / comp * MICROS), i, dcid,
                                             src, dst, dgram, "payload", length))
        plan.events.sort(key=lambda e: e.ts_us)
        flows.append(plan)

    return BenignSchedule(config=cfg, seed=seed, flows=flows,
                          benign_migrations=migrations)


def plan_infections(schedule: BenignSchedule, seed: int) -> list:
    """Pick which flows the exfiltration tool will target, deterministically.

    Only flows whose schedules reach the eligibility minimum can ever host a
    mimicked migration; among those, the choice is a seeded sample.
    """
    cfg = schedule.config
    k = round(cfg.infected_flow_fraction * cfg.flow_count)
    if k == 0:
        return []
    eligible = [f for f in schedule.flows
                if f.outgoing_short_count >= cfg.eligibility_min_packets]
    rng = derive_rng(seed, "infection")
    chosen = rng.sample(eligible, k=min(k, len(eligible)))
    return sorted(chosen, key=lambda f: f.index)


def plan_budgets(schedule: BenignSchedule, infected: list) -> dict:
    """Per-job mimic-loop packet budgets hitting the target anomaly share.

    In "share" mode the number of malicious packets (jobs' validation packet
    included) approximates share/(1-share) of the benign outgoing packets.
    In "fixture" mode each job simply gets enough budget to drain its slice
    of the fixture.
    """
    cfg = schedule.config
    if not infected:
        return {}
    if cfg.budget_mode == "fixture":
        slice_bytes = cfg.exfil_total_bytes // len(infected) + 1
        per_packet = max(cfg.probe_payload_len - 64, 256)
        n = (slice_bytes // per_packet + 1) * 2 + 16
        return {f.index: n for f in infected}
    benign_total = schedule.total_outgoing_short
    malicious_total = round(cfg.anomaly_share / (1 - cfg.anomaly_share) * benign_total)
    per_job = max(malicious_total // len(infected) - 1, 1)
    return {f.index: per_job for f in infected}
