"""CLI subcommands: exit codes, artifacts, determinism, safety gate."""

import json
import os

import pytest

from quicmimic.cli import main
from quicmimic.pcap import PcapWriter
from quicmimic.scenario import (generate_benign_flows, mixed_scenario,
                                scenario_to_config_text)


def small_cfg():
    return mixed_scenario(flow_count=3, duration_s=90.0, time_compression=30.0,
                          infected_flow_fraction=0.4, eligibility_min_packets=200,
                          exfil_total_bytes=16384)


def write_schedule_capture(schedule, path):
    with PcapWriter(path) as writer:
        for ev in schedule.merged_events():
            writer.write(ev.ts_us, ev.src, ev.dst, ev.datagram)


@pytest.fixture
def schedule_capture(tmp_path):
    schedule = generate_benign_flows(small_cfg(), seed=3)
    path = tmp_path / "bench.pcap"
    write_schedule_capture(schedule, path)
    return schedule, str(path)


def test_ingest_reports_flow_count(schedule_capture, capsys, tmp_path):
    schedule, capture = schedule_capture
    out = str(tmp_path / "snap.json")
    code = main(["ingest", capture, "--port", str(schedule.config.quic_port),
                 "--out", out])
    assert code == 0
    printed = capsys.readouterr().out
    assert f"flows: {schedule.config.flow_count}" in printed
    snapshot = json.load(open(out))
    assert len(snapshot["flows"]) == schedule.config.flow_count


def test_ingest_port_filter_excludes_everything_else(schedule_capture, capsys):
    _, capture = schedule_capture
    code = main(["ingest", capture, "--port", "4433"])
    assert code == 0
    assert "flows: 0" in capsys.readouterr().out


def test_ingest_rejects_non_capture_files(tmp_path, capsys):
    bogus = tmp_path / "not_a_capture"
    bogus.write_bytes(b"x" * 100)
    code = main(["ingest", str(bogus)])
    assert code == 2
    assert "magic" in capsys.readouterr().err


def test_usage_error_exits_one(capsys):
    assert main(["simulate", "--scenario", "nope"]) == 1
    assert main(["no-such-command"]) == 1


def test_simulate_twice_yields_identical_manifests(tmp_path, capsys):
    cfg_path = tmp_path / "scenario.ini"
    cfg_path.write_text(scenario_to_config_text(small_cfg()))
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", str(cfg_path), "--seed", "9",
                 "--out", out_a]) == 0
    assert main(["simulate", "--config", str(cfg_path), "--seed", "9",
                 "--out", out_b]) == 0
    manifest_a = open(os.path.join(out_a, "manifest.json"), "rb").read()
    manifest_b = open(os.path.join(out_b, "manifest.json"), "rb").read()
    assert manifest_a == manifest_b


def test_report_prints_manifest_counts(tmp_path, capsys):
    cfg_path = tmp_path / "scenario.ini"
    cfg_path.write_text(scenario_to_config_text(
        mixed_scenario(flow_count=2, duration_s=45.0, time_compression=30.0,
                       infected_flow_fraction=0.0)))
    out = str(tmp_path / "run")
    assert main(["simulate", "--config", str(cfg_path), "--seed", "2",
                 "--out", out]) == 0
    capsys.readouterr()
    assert main(["report", "--run", out]) == 0
    printed = capsys.readouterr().out
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    for key, value in manifest["counts"].items():
        assert f"{key}" in printed and str(value) in printed


def test_extract_matches_the_run_export(tmp_path, capsys):
    cfg_path = tmp_path / "scenario.ini"
    cfg_path.write_text(scenario_to_config_text(
        mixed_scenario(flow_count=2, duration_s=45.0, time_compression=30.0,
                       infected_flow_fraction=0.0)))
    out = str(tmp_path / "run")
    assert main(["simulate", "--config", str(cfg_path), "--seed", "4",
                 "--out", out]) == 0
    re_extracted = str(tmp_path / "again.csv")
    assert main(["extract", "--run", out, "--out", re_extracted]) == 0
    original = open(os.path.join(out, "features.csv"), "rb").read()
    assert open(re_extracted, "rb").read() == original


def test_exfil_demo_refuses_public_destination_without_acknowledgment(capsys):
    code = main(["exfil-demo", "--dst", "8.8.8.8:443"])
    assert code == 1
    assert "own" in capsys.readouterr().err


def test_exfil_demo_reconstructs_the_fixture(tmp_path, capsys):
    out = str(tmp_path / "demo")
    code = main(["exfil-demo", "--seed", "6", "--exfil-bytes", "8192",
                 "--out", out])
    assert code == 0
    printed = capsys.readouterr().out
    assert "reconstructed" in printed and "NOT reconstructed" not in printed
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["exfil_bytes"] == 8192
    assert all(job["reconstruction_match"] for job in manifest["jobs"])


def test_simulate_requires_a_scenario_or_config(capsys):
    assert main(["simulate", "--seed", "1"]) == 1


def test_measure_baserate_prints_stats(capsys):
    assert main(["measure-baserate", "--n", "120"]) == 0
    out = capsys.readouterr().out
    assert "median=" in out and "mean=" in out


def test_measure_baserate_guards_probe_count(capsys):
    assert main(["measure-baserate", "--n", "10"]) == 2
