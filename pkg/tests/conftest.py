import socket

import pytest

from quicmimic.scenario import mixed_scenario
from quicmimic.testbed import run_experiment


def mini_cfg():
    """Small, fast scenario shared by the cross-module tests (~5 s wall)."""
    return mixed_scenario(flow_count=4, duration_s=150.0, time_compression=30.0,
                          infected_flow_fraction=0.5, eligibility_min_packets=300,
                          exfil_total_bytes=32768)


def desk_cfg():
    """The desk-scale acceptance scenario: 10 scenario-minutes of mixed
    traffic, 8 flows, a quarter of them targeted (~30 s wall)."""
    return mixed_scenario()


@pytest.fixture(scope="session")
def mini_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini-run")
    return run_experiment(mini_cfg(), seed=7, out_dir=str(out))


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk-run")
    return run_experiment(desk_cfg(), seed=11, out_dir=str(out))


@pytest.fixture
def udp_sink():
    """A bound loopback socket that silently absorbs datagrams."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(("127.0.0.1", 0))
    yield sock.getsockname()
    sock.close()
