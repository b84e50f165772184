"""Desk-scale trend checks across systems, plus a long randomized soak."""
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import pytest

from app.services.engine import NS_PER_S
from app.services.metrics import TimeBin, timeseries
from app.services.scenario import Simulation, load_config, validate_config
from app.utils.presets import get_all_presets

from tests.conftest import tiny_scenario

SEEDS = (1, 2, 3)
PRESETS = tuple(get_all_presets())


@dataclass(frozen=True)
class Outcome:
    p99_ns: int
    peak_ratio: float


def _peak_ratio(bins: list[TimeBin]) -> float:
    """Max latency of the heaviest-flush bin over the mean of bins with no flushing."""
    quiet = [b for b in bins if b.flushed_pages == 0 and b.count]
    assert quiet, "every bin saw victimization"
    steady = sum(b.mean_latency * b.count for b in quiet) / sum(b.count for b in quiet)
    peak = max(bins, key=lambda b: b.flushed_pages)
    return peak.max_latency / steady


@lru_cache(maxsize=None)
def _desk_run(system: str, preset: str, seed: int = 1, policy: Optional[str] = None) -> Outcome:
    overrides = {
        "profile": "desk",
        "system": system,
        "seed": seed,
        "duration_s": 30.0,
        "workload": {"preset": preset},
    }
    if policy:
        overrides["ftl_policy"] = policy
    sim = Simulation(load_config(None, overrides))
    sim.run()
    latency = sim.summaries()[0]
    assert latency.p99_ns is not None
    bins = timeseries(
        sim.recorder.for_workload(sim.preset.latency.name),
        sim.config.metrics.bin_width_ns,
        sim.host.flush_log,
        sim.config.duration_ns,
    )
    return Outcome(latency.p99_ns, _peak_ratio(bins))


def _reduction(better: Outcome, base: Outcome) -> float:
    return 1.0 - better.p99_ns / base.p99_ns


@pytest.mark.slow
@pytest.mark.integration
@pytest.mark.parametrize("seed", SEEDS)
def test_each_mechanism_lowers_tail_latency(seed: int):
    vanilla, fd_buf, fd_ftl, fd = (
        _desk_run(system, "apache-u", seed) for system in ("vanilla", "fd-buf", "fd-ftl", "fd")
    )
    assert vanilla.p99_ns > fd_buf.p99_ns > fd_ftl.p99_ns > fd.p99_ns
    assert _reduction(fd, vanilla) >= 0.5


@pytest.mark.slow
@pytest.mark.integration
def test_unbounded_buffer_bounds_every_preset():
    cut_by_70 = 0
    for preset in PRESETS:
        oracle = _desk_run("oracle", preset)
        assert oracle.p99_ns <= _desk_run("fd", preset).p99_ns, preset
        if _reduction(oracle, _desk_run("vanilla", preset)) >= 0.7:
            cut_by_70 += 1
    assert cut_by_70 >= 4


@pytest.mark.slow
@pytest.mark.integration
def test_lsb_allocation_beats_sequential_under_foreground_eviction():
    aware = _desk_run("fd-ftl", "apache-u")
    sequential = _desk_run("fd-ftl", "apache-u", policy="sequential")
    assert _reduction(aware, sequential) >= 0.35


@pytest.mark.slow
@pytest.mark.integration
def test_throttling_beats_lsb_allocation_alone():
    cut_by_15 = sum(
        _reduction(_desk_run("fd", preset), _desk_run("fd-ftl", preset)) >= 0.15
        for preset in PRESETS
    )
    assert cut_by_15 >= 4


@pytest.mark.slow
@pytest.mark.integration
def test_victimization_spike_shows_in_time_series():
    vanilla = _desk_run("vanilla", "apache-u")
    fd = _desk_run("fd", "apache-u")
    assert vanilla.peak_ratio >= 3.0
    assert fd.peak_ratio <= vanilla.peak_ratio / 2


@pytest.mark.slow
def test_million_event_soak_keeps_invariants(tmp_path: Path):
    """Audits every simulated second; a page programmed twice raises on the spot."""
    data = tiny_scenario(tmp_path, duration_s=1800.0, seed=11)
    sim = Simulation(validate_config(data))
    sim.start()
    now = 0
    while sim.engine.steps < 1_000_000:
        now += NS_PER_S
        assert now <= sim.config.duration_ns, f"only {sim.engine.steps} events by {now} ns"
        sim.engine.run_until(now)
        sim.audit()
    buffer = sim.buffer
    assert buffer.admitted == (
        len(buffer.slots) + buffer.evicting + buffer.programmed + buffer.superseded
    )
    assert sim.ftl.programmed_pages > 0
    assert sim.ftl.erases > 0
