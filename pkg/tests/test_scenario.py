"""Scenario config parsing, distribution DSL, and generator determinism."""

import random

import pytest
from scipy import stats

from quicmimic.scenario import (PRESETS, ScenarioConfig, generate_benign_flows,
                                load_scenario_config, mixed_scenario,
                                noise_scenario, plan_budgets, plan_infections,
                                sample_dist, scenario_to_config_text)


def test_dist_dsl_const_uniform():
    rng = random.Random(1)
    assert sample_dist("const:1350", rng) == 1350.0
    draws = [sample_dist("uniform:28:64", rng) for _ in range(500)]
    assert min(draws) >= 28 and max(draws) <= 64


def test_dist_dsl_expo_mean():
    rng = random.Random(2)
    draws = [sample_dist("expo:0.1", rng) for _ in range(20_000)]
    assert abs(sum(draws) / len(draws) - 0.1) < 0.01


def test_dist_dsl_mixture_weights():
    rng = random.Random(3)
    draws = [sample_dist("mix:0.9~const:1|0.1~const:2", rng) for _ in range(5000)]
    share = draws.count(1.0) / len(draws)
    assert abs(share - 0.9) < 0.03


def test_dist_dsl_rejects_unknown_kind():
    with pytest.raises(ValueError):
        sample_dist("zipf:2", random.Random(0))


def test_config_text_round_trip(tmp_path):
    cfg = mixed_scenario(flow_count=5, loss_rate=0.01, mimic_timing=False)
    path = tmp_path / "scenario.ini"
    path.write_text(scenario_to_config_text(cfg))
    loaded = load_scenario_config(path)
    assert loaded == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(flow_count=0).validate()
    with pytest.raises(ValueError):
        ScenarioConfig(infected_flow_fraction=1.5).validate()
    with pytest.raises(ValueError):
        ScenarioConfig(budget_mode="stream").validate()


def test_generator_is_deterministic_byte_for_byte():
    cfg = mixed_scenario(flow_count=4, duration_s=60.0)
    a = generate_benign_flows(cfg, seed=42)
    b = generate_benign_flows(cfg, seed=42)
    ev_a, ev_b = a.merged_events(), b.merged_events()
    assert len(ev_a) == len(ev_b) > 0
    for x, y in zip(ev_a, ev_b):
        assert (x.ts_us, x.flow_index, x.datagram, x.dst, x.kind) == \
               (y.ts_us, y.flow_index, y.datagram, y.dst, y.kind)
    c = generate_benign_flows(cfg, seed=43)
    assert [e.datagram for e in c.merged_events()] != [e.datagram for e in ev_a]


def test_flows_open_with_a_long_header():
    schedule = generate_benign_flows(mixed_scenario(flow_count=3, duration_s=30.0), 1)
    for flow in schedule.flows:
        assert flow.events[0].kind == "long"
        assert flow.events[0].datagram[0] & 0x80


def test_migration_probes_meet_the_size_floor_and_change_destination():
    cfg = mixed_scenario(flow_count=6, duration_s=300.0,
                         benign_migration_interval_s=(5.0, 40.0))
    schedule = generate_benign_flows(cfg, seed=9)
    probes = [e for f in schedule.flows for e in f.events if e.kind == "probe"]
    assert len(probes) == schedule.benign_migrations > 0
    for flow in schedule.flows:
        dst = None
        for ev in flow.events:
            if ev.kind == "long":
                dst = ev.dst
            elif ev.kind == "probe":
                assert len(ev.datagram) >= 1200
                assert ev.dst != dst
                dst = ev.dst
            else:
                assert ev.dst == dst


def test_noise_rate_is_at_least_ten_times_lower_than_mixed():
    mixed = generate_benign_flows(mixed_scenario(), seed=5)
    noise = generate_benign_flows(noise_scenario(), seed=5)
    mixed_rate = mixed.total_outgoing_short / mixed.config.duration_s
    noise_rate = noise.total_outgoing_short / noise.config.duration_s
    assert mixed_rate >= 10 * noise_rate


def test_per_flow_lengths_match_the_configured_distribution():
    cfg = mixed_scenario(flow_count=4, duration_s=600.0)
    schedule = generate_benign_flows(cfg, seed=21)
    rng = random.Random(77)
    for flow in schedule.flows:
        lengths = [e.payload_len for e in flow.events if e.kind == "payload"]
        if len(lengths) < 1000:
            continue
        reference = [int(sample_dist(cfg.len_dists[flow.traffic_class], rng))
                     for _ in range(50_000)]
        ks = stats.ks_2samp(lengths[:1000], reference).statistic
        assert ks <= 0.05, flow.traffic_class


def test_infection_planning_respects_eligibility():
    cfg = mixed_scenario(flow_count=8, infected_flow_fraction=0.25)
    schedule = generate_benign_flows(cfg, seed=13)
    infected = plan_infections(schedule, seed=13)
    assert len(infected) == 2
    for plan in infected:
        assert plan.outgoing_short_count >= cfg.eligibility_min_packets
    assert plan_infections(schedule, seed=13) == infected  # deterministic


def test_no_infection_when_fraction_is_zero():
    cfg = mixed_scenario(flow_count=4, infected_flow_fraction=0.0)
    schedule = generate_benign_flows(cfg, seed=1)
    assert plan_infections(schedule, seed=1) == []


def test_budgets_hit_the_anomaly_share():
    cfg = mixed_scenario(flow_count=8)
    schedule = generate_benign_flows(cfg, seed=3)
    infected = plan_infections(schedule, seed=3)
    budgets = plan_budgets(schedule, infected)
    malicious = sum(budgets[p.index] + 1 for p in infected)  # + path validation
    benign = schedule.total_outgoing_short
    share = malicious / (malicious + benign)
    assert abs(share - cfg.anomaly_share) < 0.005


def test_fixture_mode_budgets_cover_the_slice():
    cfg = PRESETS["demo"]()
    schedule = generate_benign_flows(cfg, seed=2)
    infected = plan_infections(schedule, seed=2)
    budgets = plan_budgets(schedule, infected)
    assert len(infected) == 1
    per_packet_upper = cfg.probe_payload_len
    assert budgets[infected[0].index] * per_packet_upper > cfg.exfil_total_bytes
