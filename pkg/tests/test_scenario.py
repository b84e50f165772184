"""Tests for config loading, system toggles and end-to-end runs."""
import csv
import json
from pathlib import Path

import pytest

from app.errors import ConfigError
from app.schemas import DrainDiscipline, FtlPolicy, SystemName
from app.services import scenario, storage
from app.services.scenario import Simulation, load_config, resolve_system, validate_config

from tests.conftest import MIB, tiny_scenario


def _write_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps({"config": data}), encoding="utf-8")
    return path


@pytest.mark.parametrize(
    "system,hint,drain,policy,upcall,unbounded",
    [
        ("vanilla", False, DrainDiscipline.CONTINUOUS, FtlPolicy.SEQUENTIAL, False, False),
        ("fd-buf", True, DrainDiscipline.WATERMARK, FtlPolicy.SEQUENTIAL, False, False),
        ("fd-ftl", True, DrainDiscipline.WATERMARK, FtlPolicy.LATENCY_AWARE, False, False),
        ("fd", True, DrainDiscipline.WATERMARK, FtlPolicy.LATENCY_AWARE, True, False),
        ("oracle", False, DrainDiscipline.CONTINUOUS, FtlPolicy.SEQUENTIAL, False, True),
    ],
)
def test_resolve_system(system, hint, drain, policy, upcall, unbounded):
    toggles = resolve_system(system)
    assert toggles.victim_hint is hint
    assert toggles.drain is drain
    assert toggles.ftl_policy is policy
    assert toggles.status_upcall is upcall
    assert toggles.unbounded_buffer is unbounded


def test_resolve_system_policy_override():
    assert resolve_system("fd", FtlPolicy.WRITE_POINT).ftl_policy is FtlPolicy.WRITE_POINT


def test_resolve_unknown_system():
    with pytest.raises(ConfigError) as exc_info:
        resolve_system("turbo")
    assert exc_info.value.key == "system"


def test_toml_file_layers_over_profile(tmp_path: Path):
    path = tmp_path / "run.toml"
    path.write_text(
        'system = "fd-buf"\nseed = 3\npreset = "db-u"\n\n[buffer]\ncapacity_bytes = 2097152\n',
        encoding="utf-8",
    )
    config = load_config(path)
    assert config.system is SystemName.FD_BUF
    assert config.seed == 3
    assert config.workload.preset == "db-u"
    assert config.buffer.capacity_bytes == 2 * MIB
    # untouched sections come from the desk profile
    assert config.host.memory_bytes == 1 << 30
    assert config.flash.geometry.pages_per_block == 392


def test_overrides_win_over_file(tmp_path: Path):
    path = tmp_path / "run.toml"
    path.write_text("seed = 3\n", encoding="utf-8")
    config = load_config(path, {"seed": 9, "buffer": {"high_threshold": 0.9}})
    assert config.seed == 9
    assert config.buffer.high_threshold == 0.9
    assert config.buffer.capacity_bytes == 64 * MIB


def test_profile_selection():
    config = load_config(None, {"profile": "table1"})
    assert config.profile == "table1"
    assert config.flash.geometry.channels == 16
    assert config.flash.geometry.capacity_bytes >= 800 * 10**9


@pytest.mark.parametrize("name", ["full", " Full ", "TABLE1"])
def test_profile_aliases_resolve_to_table1(name: str):
    config = load_config(None, {"profile": name})
    assert config.profile == "table1"
    assert config.flash.geometry.channels == 16


def test_unknown_profile():
    with pytest.raises(ConfigError) as exc_info:
        load_config(None, {"profile": "laptop"})
    assert exc_info.value.key == "profile"


def test_missing_file(tmp_path: Path):
    with pytest.raises(ConfigError) as exc_info:
        load_config(tmp_path / "absent.toml")
    assert exc_info.value.key == "config"


def test_malformed_toml(tmp_path: Path):
    path = tmp_path / "bad.toml"
    path.write_text("seed = = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize(
    "overrides,key",
    [
        ({"buffer": {"capacity_bytes": -1}}, "buffer.capacity_bytes"),
        ({"flash": {"colour": "red"}}, "flash.colour"),
        ({"buffer": {"low_threshold": 0.9, "high_threshold": 0.8}}, "buffer"),
        ({"nvme": {"queue_depth": 1 << 15}}, "nvme.queue_depth"),
    ],
)
def test_invalid_values_name_the_key(overrides, key):
    with pytest.raises(ConfigError) as exc_info:
        load_config(None, overrides)
    assert exc_info.value.key == key


@pytest.mark.parametrize(
    "overrides",
    [
        {"system": "oracle", "buffer": {"unbounded": False}},
        {"system": "fd", "buffer": {"unbounded": True}},
    ],
)
def test_oracle_and_unbounded_must_agree(overrides):
    with pytest.raises(ConfigError) as exc_info:
        load_config(None, overrides)
    assert exc_info.value.key == "buffer.unbounded"


def test_page_sizes_must_divide():
    with pytest.raises(ConfigError) as exc_info:
        load_config(None, {"host": {"page_size": 3000}})
    assert exc_info.value.key == "host.page_size"


def test_self_check_rejects_idle_writer(tmp_path: Path):
    data = tiny_scenario(tmp_path)
    data["workload"]["throughput"]["think_time_ns"] = 10_000_000_000
    with pytest.raises(ConfigError) as exc_info:
        Simulation(validate_config(data))
    assert exc_info.value.key == "workload.throughput"


def test_footprint_beyond_device_rejected(tmp_path: Path):
    data = tiny_scenario(tmp_path)
    data["workload"]["latency"]["footprint_pages"] = 1_000_000
    with pytest.raises(ConfigError) as exc_info:
        Simulation(validate_config(data))
    assert exc_info.value.key == "workload.latency.footprint_pages"


def _read(path: Path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


@pytest.mark.integration
def test_run_writes_every_artifact(tmp_path: Path):
    config = load_config(_write_json(tmp_path / "run.json", tiny_scenario(tmp_path / "out")))
    result = scenario.run(config)
    assert set(result.paths) == {"requests", "timeseries", "summary", "wastage", "manifest"}
    assert tuple(_read(result.paths["requests"])[0]) == storage.REQUESTS_COLUMNS
    assert tuple(_read(result.paths["timeseries"])[0]) == storage.TIMESERIES_COLUMNS
    assert tuple(_read(result.paths["wastage"])[0]) == storage.WASTAGE_COLUMNS
    summary = _read(result.paths["summary"])
    assert tuple(summary[0]) == storage.SUMMARY_COLUMNS
    assert [row[1] for row in summary[1:]] == ["apache-u", "ungzip"]
    # header plus 0.5 s in 50 ms bins
    assert len(_read(result.paths["timeseries"])) == 11
    assert result.summaries[0].samples > 0
    assert result.steps > 0


@pytest.mark.integration
def test_same_seed_byte_identical_outputs(tmp_path: Path):
    first = scenario.run(validate_config(tiny_scenario(tmp_path / "a")))
    second = scenario.run(validate_config(tiny_scenario(tmp_path / "b")))
    for name in ("requests", "timeseries", "summary", "wastage"):
        assert first.paths[name].read_bytes() == second.paths[name].read_bytes()


@pytest.mark.integration
def test_different_seed_changes_requests(tmp_path: Path):
    first = scenario.run(validate_config(tiny_scenario(tmp_path / "a")))
    second = scenario.run(validate_config(tiny_scenario(tmp_path / "b", seed=8)))
    assert first.paths["requests"].read_bytes() != second.paths["requests"].read_bytes()


@pytest.mark.integration
def test_manifest_reproduces_run(tmp_path: Path):
    first = scenario.run(validate_config(tiny_scenario(tmp_path / "a")))
    manifest = storage.load_manifest(first.paths["manifest"])
    assert manifest.seed == 7
    assert manifest.toggles == first.toggles
    again = scenario.run(load_config(first.paths["manifest"], {"output_dir": str(tmp_path / "b")}))
    assert first.paths["requests"].read_bytes() == again.paths["requests"].read_bytes()


@pytest.mark.integration
def test_manifest_records_layer_counters(tmp_path: Path):
    result = scenario.run(validate_config(tiny_scenario(tmp_path)))
    counters = storage.load_manifest(result.paths["manifest"]).counters
    assert counters == result.counters
    for name in (
        "host.dispatch_stalls",
        "buffer.stalls",
        "buffer.foreground_rounds",
        "ftl.gc_runs",
        "device.hints_received",
    ):
        assert name in counters
    assert counters["device.hints_received"] > 0
    assert counters["nvme.completed"] <= counters["nvme.submitted"]


@pytest.mark.integration
@pytest.mark.parametrize("system", ["vanilla", "fd-buf", "fd-ftl", "oracle"])
def test_every_system_runs_clean(tmp_path: Path, system: str):
    result = scenario.run(validate_config(tiny_scenario(tmp_path, system=system)), write=False)
    assert result.system.value == system
    assert result.summaries[0].samples > 0
    if result.toggles.ftl_policy is FtlPolicy.SEQUENTIAL:
        assert result.wastage.wasted_pages == 0


@pytest.mark.integration
def test_write_point_policy_runs(tmp_path: Path):
    data = tiny_scenario(tmp_path, ftl_policy="write_point")
    result = scenario.run(validate_config(data), write=False)
    assert result.wastage.policy == "write_point"
    assert 0.0 < result.wastage.utilization <= 1.0


@pytest.mark.integration
def test_serial_sweep_writes_combined_summary(tmp_path: Path):
    config = validate_config(tiny_scenario(tmp_path / "sweep"))
    rows = scenario.sweep(config, [SystemName.VANILLA, SystemName.FD])
    assert [r.scenario for r in rows] == ["vanilla", "fd"]
    assert all(r.workload == "apache-u" for r in rows)
    combined = _read(tmp_path / "sweep" / "summary.csv")
    assert [row[0] for row in combined[1:]] == ["vanilla", "fd"]
    assert (tmp_path / "sweep" / "vanilla" / "requests.csv").exists()
    assert (tmp_path / "sweep" / "fd" / "manifest.json").exists()


@pytest.mark.slow
def test_long_run_keeps_invariants(tmp_path: Path):
    """Several seconds of co-run with audits at the end of each run."""
    for seed in (1, 2, 3):
        data = tiny_scenario(tmp_path / str(seed), duration_s=3.0, seed=seed)
        sim = Simulation(validate_config(data))
        sim.run()
        assert sim.recorder.samples
        assert sim.buffer.admitted == (
            sim.buffer.programmed + sim.buffer.superseded + sim.buffer.occupancy
        )
