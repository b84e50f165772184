"""Pydantic schemas for scenario configuration and run manifests."""
import math
from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models import PageType

MAX_QUEUE_DEPTH = 1 << 14


class SystemName(str, Enum):
    """Evaluated system configurations."""

    VANILLA = "vanilla"
    FD_BUF = "fd-buf"
    FD_FTL = "fd-ftl"
    FD = "fd"
    ORACLE = "oracle"


class FtlPolicy(str, Enum):
    """Physical page allocation policy."""

    LATENCY_AWARE = "latency_aware"
    WRITE_POINT = "write_point"
    SEQUENTIAL = "sequential"


class DrainDiscipline(str, Enum):
    """How the internal buffer moves dirty pages to flash."""

    CONTINUOUS = "continuous"
    WATERMARK = "watermark"


class StrictModel(BaseModel):
    """Base for config sections: unknown keys are errors."""

    model_config = ConfigDict(extra="forbid")


# Flash Schemas
class FlashGeometry(StrictModel):
    """Flash array shape."""

    channels: int = Field(2, ge=1)
    packages_per_channel: int = Field(2, ge=1)
    dies_per_package: int = Field(2, ge=1)
    planes_per_die: int = Field(2, ge=1)
    blocks_per_plane: int = Field(168, ge=1)
    pages_per_block: int = Field(392, ge=1)
    page_size: int = Field(8192, ge=512)
    n_meta: int = Field(8, ge=0)
    n_state: int = Field(3, ge=1, le=3)

    @model_validator(mode="after")
    def check_meta_pages(self) -> "FlashGeometry":
        if self.n_meta >= self.pages_per_block:
            raise ValueError("n_meta must be smaller than pages_per_block")
        return self

    @property
    def n_dies(self) -> int:
        return self.channels * self.packages_per_channel * self.dies_per_package

    @property
    def blocks_per_die(self) -> int:
        return self.planes_per_die * self.blocks_per_plane

    @property
    def total_blocks(self) -> int:
        return self.n_dies * self.blocks_per_die

    @property
    def total_pages(self) -> int:
        return self.total_blocks * self.pages_per_block

    @property
    def capacity_bytes(self) -> int:
        return self.total_pages * self.page_size

    @property
    def user_pages_per_block(self) -> int:
        return self.pages_per_block - self.n_meta


class LatencyTable(StrictModel):
    """Flash operation latencies in ns, indexed by page type."""

    read_ns: tuple[int, int, int] = (58_000, 78_000, 107_000)
    write_ns: tuple[int, int, int] = (560_000, 2_200_000, 5_000_000)
    erase_ns: int = Field(2_270_000, gt=0)
    channel_xfer_ns_per_page: int = Field(20_000, gt=0)

    @field_validator("read_ns", "write_ns")
    @classmethod
    def check_positive(cls, value: tuple[int, int, int]) -> tuple[int, int, int]:
        if any(v <= 0 for v in value):
            raise ValueError("latencies must be positive")
        return value

    @field_validator("write_ns")
    @classmethod
    def check_write_order(cls, value: tuple[int, int, int]) -> tuple[int, int, int]:
        lsb, csb, msb = value
        if not lsb <= csb <= msb:
            raise ValueError("write latencies must satisfy LSB <= CSB <= MSB")
        return value

    def read(self, page_type: PageType) -> int:
        return self.read_ns[page_type]

    def write(self, page_type: PageType) -> int:
        return self.write_ns[page_type]


class FlashConfig(StrictModel):
    """Flash module section."""

    geometry: FlashGeometry = Field(default_factory=FlashGeometry)
    latency: LatencyTable = Field(default_factory=LatencyTable)
    intensive_window_ns: int = Field(100_000_000, gt=0)
    intensive_busy_fraction: float = Field(0.3, gt=0.0, le=1.0)


# FTL Schemas
class FtlConfig(StrictModel):
    """FTL module section."""

    gc_trigger_fraction: float = Field(0.05, gt=0.0, lt=1.0)
    gc_reserve_fraction: float = Field(0.02, ge=0.0, lt=1.0)
    lsb_cap_fraction: float = Field(0.08, ge=0.0, le=1.0)
    lsb_cap_bytes: Optional[int] = Field(None, ge=0)
    max_open_blocks_per_die: int = Field(32, ge=1)
    overprovision: float = Field(0.10, ge=0.0, lt=1.0)
    precondition: bool = True
    background_first: Literal["csb", "msb"] = "csb"

    @model_validator(mode="after")
    def check_gc_pools(self) -> "FtlConfig":
        if self.gc_reserve_fraction > self.gc_trigger_fraction:
            raise ValueError("gc_reserve_fraction must not exceed gc_trigger_fraction")
        return self

    def resolve_lsb_cap(self, capacity_bytes: int) -> int:
        """LSB-only region cap in bytes."""
        if self.lsb_cap_bytes is not None:
            return self.lsb_cap_bytes
        return int(capacity_bytes * self.lsb_cap_fraction)


# Buffer Schemas
class BufferConfig(StrictModel):
    """SSD internal buffer section."""

    capacity_bytes: int = Field(64 * 1024 * 1024, gt=0)
    high_threshold: float = Field(0.8, gt=0.0, lt=1.0)
    low_threshold: float = Field(0.2, gt=0.0, lt=1.0)
    admit_ns_per_page: int = Field(5_000, ge=0)
    background_period_ns: int = Field(1_000_000, gt=0)
    drain_depth: int = Field(2, ge=1)
    unbounded: Optional[bool] = None

    @model_validator(mode="after")
    def check_thresholds(self) -> "BufferConfig":
        if self.low_threshold >= self.high_threshold:
            raise ValueError("low_threshold must be below high_threshold")
        return self


# NVMe Schemas
class NvmeConfig(StrictModel):
    """Queue pair section."""

    queue_depth: int = Field(1024, ge=2, le=MAX_QUEUE_DEPTH)
    submit_latency_ns: int = Field(10_000, ge=0)
    completion_latency_ns: int = Field(10_000, ge=0)
    # a write waiting for buffer space holds up every command fetched after it
    in_order_admission: bool = True


# Host Schemas
class RatioSet(StrictModel):
    """A dirty_ratio / dirty_background_ratio pair."""

    dirty_ratio: float = Field(..., gt=0.0, lt=1.0)
    dirty_background_ratio: float = Field(..., gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_order(self) -> "RatioSet":
        if self.dirty_background_ratio >= self.dirty_ratio:
            raise ValueError("dirty_background_ratio must be below dirty_ratio")
        return self


class HostConfig(StrictModel):
    """Host page cache and writeback section."""

    memory_bytes: int = Field(1024 * 1024 * 1024, gt=0)
    page_size: int = Field(4096, ge=512)
    low_set: RatioSet = Field(
        default_factory=lambda: RatioSet(dirty_ratio=0.05, dirty_background_ratio=0.03)
    )
    high_set: RatioSet = Field(
        default_factory=lambda: RatioSet(dirty_ratio=0.10, dirty_background_ratio=0.05)
    )
    dirty_expire_ns: int = Field(30_000_000_000, gt=0)
    background_batch_pages: int = Field(1024, ge=1)
    check_interval_ns: int = Field(10_000_000, gt=0)
    flusher_threads: int = Field(1, ge=1)
    max_command_pages: int = Field(32, ge=1)
    read_starvation_limit: int = Field(8, ge=1)
    copy_ns_per_page: int = Field(1_000, ge=0)

    @property
    def total_pages(self) -> int:
        return self.memory_bytes // self.page_size


# Workload Schemas
class WorkloadClass(str, Enum):
    """Role a workload plays in a co-run."""

    LATENCY_CRITICAL = "latency_critical"
    THROUGHPUT_WRITE = "throughput_write"


class WorkloadSpec(StrictModel):
    """One synthetic workload."""

    name: str
    workload_class: WorkloadClass
    op_mix: float = Field(..., ge=0.0, le=1.0, description="Fraction of reads")
    arrival: Literal["open", "closed"] = "open"
    mean_interarrival_ns: int = Field(2_000_000, gt=0)
    think_time_ns: int = Field(0, ge=0)
    size_pages: list[int] = Field(default_factory=lambda: [2])
    size_weights: list[float] = Field(default_factory=lambda: [1.0])
    footprint_start: int = Field(0, ge=0)
    footprint_pages: int = Field(..., gt=0)
    fsync_fraction: float = Field(0.0, ge=0.0, le=1.0)
    # on/off phases anchored at time 0; either left at 0 keeps the workload always on
    burst_ns: int = Field(0, ge=0)
    idle_ns: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_sizes(self) -> "WorkloadSpec":
        if not self.size_pages or len(self.size_pages) != len(self.size_weights):
            raise ValueError("size_pages and size_weights must be non-empty and equal length")
        if any(p < 1 for p in self.size_pages):
            raise ValueError("request sizes must be at least one page")
        if any(w < 0 for w in self.size_weights) or sum(self.size_weights) <= 0:
            raise ValueError("size_weights must be non-negative with a positive sum")
        if max(self.size_pages) > self.footprint_pages:
            raise ValueError("largest request exceeds footprint_pages")
        return self

    @property
    def mean_size_pages(self) -> float:
        total = sum(self.size_weights)
        return sum(p * w for p, w in zip(self.size_pages, self.size_weights)) / total

    @property
    def footprint_end(self) -> int:
        return self.footprint_start + self.footprint_pages

    @property
    def phased(self) -> bool:
        return self.burst_ns > 0 and self.idle_ns > 0

    @property
    def duty_cycle(self) -> float:
        """Share of time the workload is on."""
        if not self.phased:
            return 1.0
        return self.burst_ns / (self.burst_ns + self.idle_ns)


class WorkloadConfig(StrictModel):
    """Workload section: a preset plus per-field overrides."""

    preset: str = "apache-u"
    latency: dict = Field(default_factory=dict)
    throughput: dict = Field(default_factory=dict)


class MetricsConfig(StrictModel):
    """Metrics section."""

    warmup_ns: int = Field(2_000_000_000, ge=0)
    bin_width_ns: int = Field(100_000_000, gt=0)


# Scenario Schemas
class ScenarioConfig(StrictModel):
    """Complete, validated description of one simulation run."""

    system: SystemName = SystemName.FD
    ftl_policy: Optional[FtlPolicy] = None
    profile: str = "desk"
    duration_s: float = Field(30.0, gt=0.0)
    seed: int = Field(1, ge=0)
    output_dir: str = "results"
    flash: FlashConfig = Field(default_factory=FlashConfig)
    ftl: FtlConfig = Field(default_factory=FtlConfig)
    buffer: BufferConfig = Field(default_factory=BufferConfig)
    nvme: NvmeConfig = Field(default_factory=NvmeConfig)
    host: HostConfig = Field(default_factory=HostConfig)
    workload: WorkloadConfig = Field(default_factory=WorkloadConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)

    @property
    def duration_ns(self) -> int:
        return int(round(self.duration_s * 1e9))


class FeatureToggles(BaseModel):
    """Mechanisms enabled for a system configuration."""

    victim_hint: bool
    drain: DrainDiscipline
    ftl_policy: FtlPolicy
    status_upcall: bool
    unbounded_buffer: bool


class RunManifest(BaseModel):
    """Machine-readable record of a run: enough to reproduce it."""

    app_name: str
    version: str
    seed: int
    toggles: FeatureToggles
    config: ScenarioConfig
    counters: dict[str, int] = Field(default_factory=dict)


def solve_blocks_per_plane(
    capacity_bytes: int,
    channels: int,
    packages_per_channel: int,
    dies_per_package: int,
    planes_per_die: int,
    pages_per_block: int,
    page_size: int,
) -> int:
    """
    Smallest blocks_per_plane giving at least `capacity_bytes` of raw flash.

    Args:
        capacity_bytes: Target raw capacity
        channels: Channel count
        packages_per_channel: Packages on each channel
        dies_per_package: Dies in each package
        planes_per_die: Planes in each die
        pages_per_block: Pages in each block
        page_size: Page size in bytes

    Returns:
        Block count per plane
    """
    planes = channels * packages_per_channel * dies_per_package * planes_per_die
    return max(1, math.ceil(capacity_bytes / (planes * pages_per_block * page_size)))
