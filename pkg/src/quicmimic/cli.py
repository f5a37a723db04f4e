"""Command-line entry point.

Subcommands: ingest, simulate, exfil-demo, extract, report, measure-baserate.
Exit codes: 0 success, 1 usage error, 2 runtime failure. The output directory
defaults to ./runs and can be overridden with --out or QUICMIMIC_OUT.
"""

from __future__ import annotations

import argparse
import dataclasses
import ipaddress
import json
import logging
import os
import sys

from . import __version__, features, pcap, testbed
from .flows import Direction, FlowTable, Label, PacketKind, PacketRecord
from .mimicry import measure_base_rate
from .scenario import PRESETS, ScenarioConfig, load_scenario_config
from .util import UnsafeDestinationError, check_destination

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="quicmimic",
                     description="loopback QUIC migration-mimicry testbed")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="replay a capture file into a flow snapshot")
    p.add_argument("capture")
    p.add_argument("--port", type=int, default=443,
                   help="UDP port filter (default 443)")
    p.add_argument("--local-net", default=None,
                   help="CIDR whose members count as the outgoing side")
    p.add_argument("--idle-retire", type=float, default=60.0,
                   help="seconds of idle after which a flow counts as retired")
    p.add_argument("--out", default=None, help="snapshot JSON path")

    p = sub.add_parser("simulate", help="run a full closed-loop scenario")
    p.add_argument("--scenario", choices=sorted(PRESETS), default=None)
    p.add_argument("--config", default=None, help="scenario configuration file")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None, help="run output directory")
    p.add_argument("--flows", type=int, default=None)
    p.add_argument("--duration", type=float, default=None,
                   help="scenario duration in (uncompressed) seconds")
    p.add_argument("--compression", type=float, default=None)
    p.add_argument("--infected-fraction", type=float, default=None)
    p.add_argument("--anomaly-share", type=float, default=None)
    p.add_argument("--loss", type=float, default=None)
    p.add_argument("--exfil-bytes", type=int, default=None)
    p.add_argument("--eligibility-min", type=int, default=None)
    p.add_argument("--no-timing-mimicry", action="store_true",
                   help="ablation: send exfil packets at the constant base rate")
    p.add_argument("--fresh-dcid", action="store_true",
                   help="use a fresh DCID of matching length instead of reusing")
    p.add_argument("--fixture", default=None, help="file to exfiltrate")

    p = sub.add_parser("exfil-demo",
                       help="single-flow end-to-end exfiltration demonstration")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--exfil-bytes", type=int, default=65536)
    p.add_argument("--fixture", default=None)
    p.add_argument("--dst", default=None,
                   help="ip:port of an external collection server")
    p.add_argument("--i-own-this-network", action="store_true",
                   help="required acknowledgment for any non-private destination")

    p = sub.add_parser("extract", help="re-derive the feature CSV from a run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--out", default=None, help="CSV path")

    p = sub.add_parser("report", help="pretty-print a run manifest")
    p.add_argument("--run", required=True, help="run directory or manifest path")

    p = sub.add_parser("measure-baserate",
                       help="measure this host's unthrottled send interval")
    p.add_argument("--n", type=int, default=200)
    return parser


def _out_dir(arg, name: str) -> str:
    if arg:
        return arg
    base = os.environ.get("QUICMIMIC_OUT", "runs")
    return os.path.join(base, name)


def _cmd_ingest(args) -> int:
    local_net = ipaddress.ip_network(args.local_net) if args.local_net else None
    result = pcap.ingest_capture(args.capture, port=args.port, local_net=local_net,
                                 idle_threshold_us=int(args.idle_retire * 1_000_000))
    summary = result.summary()
    snapshot = {
        "capture": args.capture,
        "port_filter": args.port,
        "summary": summary,
        "flows": [
            {
                "dcid": flow.dcid.hex(),
                "packets": len(flow.records),
                "outgoing_short": len(flow.outgoing_short_timestamps()),
                "payload_dataset_size": flow.dataset_total,
                "migrations": len(flow.migration_events),
                "retired": flow.retired,
            }
            for flow in sorted(result.table.snapshot_flows(), key=lambda f: f.dcid)
        ],
    }
    out = args.out or (args.capture + ".snapshot.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, indent=2)
        fh.write("\n")
    print(f"flows: {summary['flows']}  packets: {summary['packets_ingested']}  "
          f"retired: {summary['retired_flows']}")
    print("discards: " + ", ".join(f"{k}={v}" for k, v in summary["discards"].items()))
    print(f"snapshot written to {out}")
    return 0


def _scenario_from_args(args) -> ScenarioConfig:
    if args.config:
        cfg = load_scenario_config(args.config)
    elif args.scenario:
        cfg = PRESETS[args.scenario]()
    else:
        raise SystemExit(_usage_error("simulate needs --scenario or --config"))
    overrides = {}
    mapping = {
        "flows": "flow_count", "duration": "duration_s",
        "compression": "time_compression",
        "infected_fraction": "infected_flow_fraction",
        "anomaly_share": "anomaly_share", "loss": "loss_rate",
        "exfil_bytes": "exfil_total_bytes",
        "eligibility_min": "eligibility_min_packets",
    }
    for arg_name, field_name in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[field_name] = value
    if getattr(args, "no_timing_mimicry", False):
        overrides["mimic_timing"] = False
    if getattr(args, "fresh_dcid", False):
        overrides["fresh_dcid"] = True
    return dataclasses.replace(cfg, **overrides)


def _usage_error(message: str) -> int:
    print(f"quicmimic: error: {message}", file=sys.stderr)
    return 1


def _read_fixture(args):
    if getattr(args, "fixture", None):
        with open(args.fixture, "rb") as fh:
            return fh.read()
    return None


def _cmd_simulate(args) -> int:
    cfg = _scenario_from_args(args)
    out_dir = _out_dir(args.out, f"{cfg.name}-s{args.seed}")
    result = testbed.run_experiment(cfg, args.seed, out_dir,
                                    fixture=_read_fixture(args))
    _print_manifest(result.manifest)
    print(f"artifacts in {out_dir}")
    return 0 if result.manifest["valid"] else 2


def _cmd_exfil_demo(args) -> int:
    from .scenario import demo_scenario
    cfg = demo_scenario(exfil_total_bytes=args.exfil_bytes)
    dst_override = None
    if args.dst:
        host, _, port = args.dst.rpartition(":")
        try:
            check_destination(host, acknowledged=args.i_own_this_network)
        except UnsafeDestinationError as exc:
            return _usage_error(str(exc))
        dst_override = (host, int(port))
    out_dir = _out_dir(args.out, f"demo-s{args.seed}")
    result = testbed.run_experiment(cfg, args.seed, out_dir,
                                    fixture=_read_fixture(args),
                                    exfil_dst_override=dst_override,
                                    dest_acknowledged=args.i_own_this_network)
    _print_manifest(result.manifest)
    for job in result.manifest["jobs"]:
        status = "reconstructed" if job["reconstruction_match"] else "NOT reconstructed"
        print(f"job {job['dcid']}: {job['packets_sent']} packets, "
              f"{job['data_bytes_delivered']} data bytes delivered, {status}")
    return 0 if result.manifest["valid"] else 2


def _cmd_extract(args) -> int:
    records_path = os.path.join(args.run, "records.jsonl")
    table = load_records(records_path)
    rows = features.extract(table)
    out = args.out or os.path.join(args.run, "features.csv")
    features.export_csv(rows, out)
    print(f"{len(rows)} feature rows written to {out} "
          f"(anomaly share {features.anomaly_share(rows):.4f})")
    return 0


def load_records(path) -> FlowTable:
    """Rebuild a ground-truth flow table from a run's record dump."""
    table = FlowTable()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            table.ingest(PacketRecord(
                ts_us=rec["ts_us"],
                five_tuple=(rec["src_ip"], rec["dst_ip"], rec["src_port"],
                            rec["dst_port"], "udp"),
                dcid=bytes.fromhex(rec["dcid"]),
                payload_len=rec["payload_len"],
                kind=PacketKind(rec["kind"]),
                direction=Direction(rec["direction"]),
                label=Label(rec["label"]),
            ))
    return table


def _print_manifest(manifest: dict) -> None:
    counts = manifest["counts"]
    print(f"scenario: {manifest['scenario']['name']}  seed: {manifest['seed']}  "
          f"valid: {manifest['valid']}")
    width = max(len(k) for k in counts)
    for key in ("benign_pkts", "malicious_pkts", "benign_migrations",
                "malicious_migrations"):
        print(f"  {key.ljust(width)}  {counts[key]}")
    print(f"  {'exfil_bytes'.ljust(width)}  {manifest['exfil_bytes']}")
    if manifest["failures"]:
        for failure in manifest["failures"]:
            print(f"  failure: {failure}")


def _cmd_report(args) -> int:
    path = args.run
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    manifest = testbed.load_manifest(path)
    _print_manifest(manifest)
    for job in manifest["jobs"]:
        print(f"  job flow={job['flow_index']} dcid={job['dcid']} "
              f"sent={job['packets_sent']} delivered={job['data_bytes_delivered']} "
              f"match={job['reconstruction_match']}")
    print("  artifacts: " + ", ".join(
        f"{k}={v}" for k, v in manifest["artifacts"].items()))
    return 0


def _cmd_measure_baserate(args) -> int:
    rate = measure_base_rate(n_probe=args.n)
    print(f"n={rate.n_probe} median={rate.median_us}us mean={rate.mean_us}us "
          f"stddev={rate.stddev_us:.1f}us")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "simulate": _cmd_simulate,
    "exfil-demo": _cmd_exfil_demo,
    "extract": _cmd_extract,
    "report": _cmd_report,
    "measure-baserate": _cmd_measure_baserate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else
        logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except UnsafeDestinationError as exc:
        print(f"quicmimic: refused: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"quicmimic: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
