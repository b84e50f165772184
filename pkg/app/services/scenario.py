"""Scenario resolution, stack assembly, single runs and system sweeps."""
import copy
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from pydantic import ValidationError

from app import __version__
from app.config import settings
from app.errors import ConfigError
from app.models import WastageReport
from app.schemas import (
    DrainDiscipline,
    FeatureToggles,
    FtlPolicy,
    RunManifest,
    ScenarioConfig,
    SystemName,
)
from app.services import storage
from app.services.buffer import InternalBuffer
from app.services.device import SsdController
from app.services.engine import Engine
from app.services.flash import FlashArray
from app.services.ftl import Ftl
from app.services.host import HostKernel
from app.services.metrics import MetricsRecorder, SummaryRow, summarize, timeseries
from app.services.nvme import QueuePair
from app.services.workload import ScenarioPreset, WorkloadRunner, preset
from app.utils.profiles import canonical_profile, get_all_profiles, get_profile

logger = logging.getLogger(__name__)

SWEEP_SYSTEMS = (SystemName.VANILLA, SystemName.FD_BUF, SystemName.FD_FTL, SystemName.FD)

# Seconds within which the throughput writer must cross dirty_background_ratio
SELF_CHECK_S = 10

_TOGGLES = {
    SystemName.VANILLA: (False, DrainDiscipline.CONTINUOUS, FtlPolicy.SEQUENTIAL, False, False),
    SystemName.FD_BUF: (True, DrainDiscipline.WATERMARK, FtlPolicy.SEQUENTIAL, False, False),
    SystemName.FD_FTL: (True, DrainDiscipline.WATERMARK, FtlPolicy.LATENCY_AWARE, False, False),
    SystemName.FD: (True, DrainDiscipline.WATERMARK, FtlPolicy.LATENCY_AWARE, True, False),
    SystemName.ORACLE: (False, DrainDiscipline.CONTINUOUS, FtlPolicy.SEQUENTIAL, False, True),
}


def resolve_system(system: SystemName | str, ftl_policy: Optional[FtlPolicy] = None) -> FeatureToggles:
    """
    Feature toggles of a named system.

    Args:
        system: System name
        ftl_policy: Allocation policy override

    Raises:
        ConfigError: If the system is unknown
    """
    try:
        name = SystemName(system)
    except ValueError:
        raise ConfigError(
            "system", f"unknown system '{system}', expected one of {[s.value for s in SystemName]}"
        ) from None
    hint, drain, policy, upcall, unbounded = _TOGGLES[name]
    return FeatureToggles(
        victim_hint=hint,
        drain=drain,
        ftl_policy=ftl_policy or policy,
        status_upcall=upcall,
        unbounded_buffer=unbounded,
    )


def deep_merge(base: dict, overlay: dict) -> dict:
    """Recursively merge `overlay` into a copy of `base`."""
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(path: str | Path) -> dict:
    """
    Parse a TOML scenario file or a JSON run manifest.

    Raises:
        ConfigError: If the file is missing or malformed
    """
    path = Path(path)
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
            return data.get("config", data)
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None


def validate_config(data: dict) -> ScenarioConfig:
    """Validate a merged config dict, naming the first offending key on failure."""
    try:
        return ScenarioConfig(**data)
    except ValidationError as exc:
        error = exc.errors()[0]
        loc = ".".join(str(part) for part in error["loc"]) or "config"
        raise ConfigError(loc, error["msg"]) from None


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict] = None) -> ScenarioConfig:
    """
    Build a scenario config: profile, then file, then CLI overrides.

    Args:
        path: Optional TOML file or JSON manifest
        overrides: Values that win over the file (nested dicts merge)

    Returns:
        Validated config

    Raises:
        ConfigError: On unknown profiles, malformed files or invalid values
    """
    file_data = read_config_file(path) if path else {}
    if "preset" in file_data:
        file_data = deep_merge(file_data, {"workload": {"preset": file_data.pop("preset")}})
    overrides = overrides or {}
    profile_name = overrides.get("profile") or file_data.get("profile") or settings.DEFAULT_PROFILE
    try:
        profile = get_profile(profile_name)
    except KeyError:
        raise ConfigError(
            "profile", f"unknown profile '{profile_name}', expected one of {get_all_profiles()}"
        ) from None
    defaults = {"seed": settings.DEFAULT_SEED, "output_dir": settings.OUTPUT_DIR}
    merged = deep_merge(deep_merge(deep_merge(profile, defaults), file_data), overrides)
    merged["profile"] = canonical_profile(profile_name)
    config = validate_config(merged)
    check_consistency(config)
    return config


def check_consistency(config: ScenarioConfig) -> None:
    """
    Cross-section checks a single schema cannot express.

    Raises:
        ConfigError: On contradictory settings
    """
    oracle = config.system is SystemName.ORACLE
    if oracle and config.buffer.unbounded is False:
        raise ConfigError("buffer.unbounded", "oracle requires an unbounded buffer")
    if not oracle and config.buffer.unbounded:
        raise ConfigError("buffer.unbounded", f"only oracle runs with an unbounded buffer, not {config.system.value}")
    if config.flash.geometry.page_size % config.host.page_size:
        raise ConfigError("host.page_size", "device page size must be a multiple of the host page size")


@dataclass
class RunResult:
    """Outcome of one run."""

    system: SystemName
    toggles: FeatureToggles
    summaries: list[SummaryRow]
    wastage: WastageReport
    steps: int
    counters: dict[str, int] = field(default_factory=dict)
    paths: dict[str, Path] = field(default_factory=dict)


class Simulation:
    """
    The assembled host + SSD stack for one scenario.

    Args:
        config: Validated scenario config
        trace: Record every flash transaction
    """

    def __init__(self, config: ScenarioConfig, trace: bool = False):
        check_consistency(config)
        self.config = config
        self.toggles = resolve_system(config.system, config.ftl_policy)
        geometry = config.flash.geometry
        self.ratio = geometry.page_size // config.host.page_size

        self.engine = Engine(config.seed)
        self.flash = FlashArray(
            geometry,
            config.flash.latency,
            self.engine,
            config.flash.intensive_busy_fraction,
            trace,
        )
        self.ftl = Ftl(geometry, config.ftl, self.flash, self.toggles.ftl_policy)
        buffer_config = config.buffer.model_copy(update={"unbounded": self.toggles.unbounded_buffer})
        self.buffer = InternalBuffer(
            buffer_config,
            geometry.page_size,
            self.engine,
            self.ftl,
            self.flash,
            self.toggles.drain,
            config.flash.intensive_window_ns,
        )
        self.queue = QueuePair(config.nvme, self.engine)
        self.device = SsdController(
            self.engine,
            self.queue,
            self.buffer,
            self.ftl,
            self.ratio,
            decode_hints=self.toggles.victim_hint,
            report_status=self.toggles.status_upcall,
            dram_ns_per_page=config.buffer.admit_ns_per_page,
            in_order=config.nvme.in_order_admission,
        )
        self.host = HostKernel(
            config.host,
            self.engine,
            self.queue,
            self.ratio,
            tag_victimization=self.toggles.victim_hint,
            adaptive_ratios=self.toggles.status_upcall,
        )
        self.recorder = MetricsRecorder()
        self.preset: ScenarioPreset = preset(
            config.workload.preset, config.workload.latency, config.workload.throughput
        )
        self._check_footprints()
        self.runners = [
            WorkloadRunner(
                spec, self.engine, self.host.submit_request, self.recorder.record, config.duration_ns
            )
            for spec in (self.preset.latency, self.preset.throughput)
        ]
        self._self_check()

    def _check_footprints(self) -> None:
        for section, spec in (("latency", self.preset.latency), ("throughput", self.preset.throughput)):
            end = math.ceil(spec.footprint_end / self.ratio)
            if end > self.ftl.logical_pages:
                raise ConfigError(
                    f"workload.{section}.footprint_pages",
                    f"{spec.name} reaches device page {end}, capacity is {self.ftl.logical_pages}",
                )

    def _self_check(self) -> None:
        host = self.config.host
        rate = self.runners[1].nominal_write_bytes_per_s(host.page_size, host.copy_ns_per_page)
        needed = host.low_set.dirty_background_ratio * host.memory_bytes
        if rate * SELF_CHECK_S <= needed:
            raise ConfigError(
                "workload.throughput",
                f"{self.preset.throughput.name} dirties {rate * SELF_CHECK_S:.0f} bytes in "
                f"{SELF_CHECK_S} s, below dirty_background_ratio ({needed:.0f} bytes)",
            )

    def precondition(self) -> None:
        spec = self.preset.latency
        start = spec.footprint_start // self.ratio
        end = math.ceil(spec.footprint_end / self.ratio)
        self.ftl.precondition(range(start, end))

    def start(self) -> None:
        """Precondition if configured, then schedule the workloads and the writeback timer."""
        if self.config.ftl.precondition:
            self.precondition()
        for runner in self.runners:
            runner.start()
        self.host.start_timer()

    def run(self) -> int:
        """Simulate to the configured duration and audit; returns events dispatched."""
        self.start()
        steps = self.engine.run_until(self.config.duration_ns)
        self.host.stop_timer()
        self.audit()
        return steps

    def audit(self) -> None:
        """
        Raises:
            SimulationError: If any layer's invariants are broken
        """
        self.ftl.check_invariants()
        self.buffer.check_invariants()
        self.queue.check_invariants()
        self.host.check_invariants()

    def counters(self) -> dict[str, int]:
        """Event counts of every layer, keyed `layer.counter`."""
        return {
            "host.foreground_flushes": self.host.foreground_flushes,
            "host.background_flushes": self.host.background_flushes,
            "host.ratio_switches": self.host.ratio_switches,
            "host.dispatch_stalls": self.host.dispatch_stalls,
            "host.evictions": self.host.cache.evictions,
            "nvme.submitted": self.queue.submitted,
            "nvme.completed": self.queue.completed,
            "device.hints_received": self.device.hints_received,
            "device.buffer_read_hits": self.device.buffer_read_hits,
            "device.flash_reads": self.device.flash_reads,
            "device.blocked_ns": self.device.blocked_ns,
            "buffer.admitted": self.buffer.admitted,
            "buffer.superseded": self.buffer.superseded,
            "buffer.programmed": self.buffer.programmed,
            "buffer.stalls": self.buffer.stalls,
            "buffer.foreground_rounds": self.buffer.foreground_rounds,
            "ftl.programmed_pages": self.ftl.programmed_pages,
            "ftl.wasted_pages": self.ftl.wasted_pages,
            "ftl.gc_runs": self.ftl.gc_runs,
            "ftl.gc_copies": self.ftl.gc_copies,
            "ftl.erases": self.ftl.erases,
        }

    def summaries(self) -> list[SummaryRow]:
        warmup = self.config.metrics.warmup_ns
        if warmup >= self.config.duration_ns:
            logger.warning(f"Warm-up {warmup} ns covers the whole run")
        return [
            summarize(
                self.config.system.value,
                spec.name,
                self.recorder.for_workload(spec.name),
                warmup,
            )
            for spec in (self.preset.latency, self.preset.throughput)
        ]

    def write_outputs(self, out_dir: str | Path) -> dict[str, Path]:
        out = storage.ensure_output_dir(out_dir)
        latency_samples = self.recorder.for_workload(self.preset.latency.name)
        bins = timeseries(
            latency_samples,
            self.config.metrics.bin_width_ns,
            self.host.flush_log,
            self.config.duration_ns,
        )
        manifest = RunManifest(
            app_name=settings.APP_NAME,
            version=__version__,
            seed=self.config.seed,
            toggles=self.toggles,
            config=self.config,
            counters=self.counters(),
        )
        return {
            "requests": storage.save_requests(out, self.recorder.samples),
            "timeseries": storage.save_timeseries(out, bins),
            "summary": storage.save_summary(out, self.summaries()),
            "wastage": storage.save_wastage(out, [self.ftl.wastage()]),
            "manifest": storage.save_manifest(out, manifest),
        }


def run(config: ScenarioConfig, write: bool = True) -> RunResult:
    """
    Execute one deterministic simulation and write its artifacts.

    Args:
        config: Validated scenario config
        write: Write CSVs and the manifest to `config.output_dir`

    Returns:
        Run result
    """
    logger.info(
        f"Running {config.system.value} on {config.workload.preset} "
        f"for {config.duration_s} s (seed {config.seed})"
    )
    sim = Simulation(config)
    steps = sim.run()
    result = RunResult(
        config.system, sim.toggles, sim.summaries(), sim.ftl.wastage(), steps, sim.counters()
    )
    logger.info(" ".join(f"{name}={value}" for name, value in result.counters.items()))
    if write:
        result.paths = sim.write_outputs(config.output_dir)
        logger.info(f"Wrote results to {config.output_dir}")
    for row in result.summaries:
        logger.info(f"{row.scenario}/{row.workload}: p99={row.p99_ns} ns over {row.samples} samples")
    return result


def _run_member(config_data: dict) -> list[SummaryRow]:
    return run(ScenarioConfig(**config_data)).summaries


def sweep(
    config: ScenarioConfig,
    systems: Iterable[SystemName] = SWEEP_SYSTEMS,
    jobs: int = 1,
) -> list[SummaryRow]:
    """
    Run `config` once per system, each into its own sub-directory, then
    write a combined summary of the latency-critical workload.

    Args:
        config: Base config; `system` is replaced per member
        systems: Systems to run
        jobs: Worker processes; 1 runs serially

    Returns:
        One latency-critical summary row per system
    """
    out = Path(config.output_dir)
    members = [
        config.model_copy(update={"system": system, "output_dir": str(out / system.value)})
        for system in systems
    ]
    for member in members:
        check_consistency(member)
    payloads = [member.model_dump(mode="json") for member in members]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results: list[list[SummaryRow]] = list(pool.map(_run_member, payloads))
    else:
        results = [_run_member(payload) for payload in payloads]
    rows = [member_rows[0] for member_rows in results]
    storage.save_summary(storage.ensure_output_dir(out), rows)
    logger.info(f"Sweep of {len(rows)} systems written to {out / 'summary.csv'}")
    return rows
