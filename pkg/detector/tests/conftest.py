import subprocess
import sys
import time
from dataclasses import dataclass

import pytest


@dataclass
class Study:
    run_mimic: str
    run_ablated: str
    generation_seconds: float


def _simulate(out_dir, *extra):
    cmd = [sys.executable, "-m", "quicmimic", "simulate", "--scenario", "mixed",
           "--seed", "23", "--out", str(out_dir), *extra]
    proc = subprocess.run(cmd, capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr + proc.stdout


@pytest.fixture(scope="session")
def study(tmp_path_factory) -> Study:
    """Two identically seeded desk-scale runs produced through the testbed's
    CLI (the packages talk only via documented artifacts), differing in the
    timing-mimicry flag."""
    base = tmp_path_factory.mktemp("study")
    started = time.perf_counter()
    _simulate(base / "mimic")
    _simulate(base / "ablate", "--no-timing-mimicry")
    return Study(str(base / "mimic"), str(base / "ablate"),
                 time.perf_counter() - started)
