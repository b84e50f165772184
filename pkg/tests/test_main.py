"""Tests for the command-line entry point."""
import json
from pathlib import Path

import pytest

from app.errors import EXIT_CONFIG_ERROR, EXIT_OK
from app.main import build_parser, main, overrides_from_args

from tests.conftest import tiny_scenario


def _config_file(tmp_path: Path, **overrides) -> Path:
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"config": tiny_scenario(tmp_path / "unused", **overrides)}), encoding="utf-8")
    return path


def test_overrides_only_carry_given_flags():
    args = build_parser().parse_args(["--system", "vanilla", "--seed", "4", "--scenario", "db-u"])
    assert overrides_from_args(args) == {
        "system": "vanilla",
        "seed": 4,
        "workload": {"preset": "db-u"},
    }


@pytest.mark.integration
def test_run_exits_zero_and_writes_results(tmp_path: Path):
    out = tmp_path / "results"
    code = main(["--config", str(_config_file(tmp_path)), "--out", str(out), "--duration-s", "0.2"])
    assert code == EXIT_OK
    for name in ("requests.csv", "timeseries.csv", "summary.csv", "wastage.csv", "manifest.json"):
        assert (out / name).exists()


def test_invalid_config_exits_two(tmp_path: Path):
    path = _config_file(tmp_path, buffer={"capacity_bytes": 0})
    assert main(["--config", str(path), "--out", str(tmp_path / "r")]) == EXIT_CONFIG_ERROR


def test_missing_config_exits_two(tmp_path: Path):
    assert main(["--config", str(tmp_path / "absent.toml")]) == EXIT_CONFIG_ERROR


def test_unknown_system_rejected_by_parser():
    with pytest.raises(SystemExit) as exc_info:
        main(["--system", "turbo"])
    assert exc_info.value.code == 2


@pytest.mark.integration
def test_sweep_writes_one_directory_per_system(tmp_path: Path):
    out = tmp_path / "sweep"
    code = main(
        ["--config", str(_config_file(tmp_path)), "--out", str(out), "--duration-s", "0.2", "--sweep", "systems"]
    )
    assert code == EXIT_OK
    for system in ("vanilla", "fd-buf", "fd-ftl", "fd"):
        assert (out / system / "summary.csv").exists()
    assert (out / "summary.csv").exists()
