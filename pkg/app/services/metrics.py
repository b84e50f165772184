"""Latency statistics, time series and wastage reporting."""
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from app.errors import SimulationError
from app.models import IoRequest, LatencySample, WastageReport
from app.services.ftl import Ftl

logger = logging.getLogger(__name__)


def percentile(samples: Sequence[int], p: float) -> int:
    """
    Nearest-rank percentile.

    Args:
        samples: Latencies in ns
        p: Rank fraction in (0, 1]

    Returns:
        The ceil(p * n)-th smallest sample (1-based)

    Raises:
        SimulationError: If there are no samples or p is out of range
    """
    if not 0.0 < p <= 1.0:
        raise SimulationError(f"percentile rank {p} outside (0, 1]")
    n = len(samples)
    if n == 0:
        raise SimulationError("percentile of an empty sample set")
    ordered = np.sort(np.asarray(samples, dtype=np.int64))
    rank = max(1, math.ceil(p * n - 1e-9))
    return int(ordered[rank - 1])


@dataclass(frozen=True)
class TimeBin:
    bin_start: int
    count: int
    mean_latency: float
    max_latency: int
    flushed_pages: int


def timeseries(
    samples: Sequence[LatencySample],
    bin_width: int,
    flush_log: Iterable[tuple[int, int]] = (),
    end_time: Optional[int] = None,
) -> list[TimeBin]:
    """
    Per-bin latency mean/max alongside host flush volume.

    Samples are binned by submit time, flushes by issue time. Bins start
    at t=0 and run to `end_time` when given, else to the last sample or
    flush; anything at or past the end lands in the final bin.

    Args:
        samples: Completed requests
        bin_width: Bin width in ns
        flush_log: (time, host pages) of every victimization batch
        end_time: Instant the series covers

    Returns:
        One entry per bin, empty bins included with zero count
    """
    if bin_width <= 0:
        raise SimulationError("bin width must be positive")
    flushes = list(flush_log)
    submit = np.fromiter((s.submit_time for s in samples), dtype=np.int64, count=len(samples))
    latency = np.fromiter((s.latency for s in samples), dtype=np.int64, count=len(samples))
    last = max(([int(submit.max())] if len(submit) else []) + [t for t, _ in flushes], default=-1)
    if end_time:
        n_bins = max(1, math.ceil(end_time / bin_width))
    else:
        n_bins = max(1, last // bin_width + 1)

    index = np.minimum(submit // bin_width, n_bins - 1)
    counts = np.bincount(index, minlength=n_bins)
    sums = np.bincount(index, weights=latency, minlength=n_bins)
    maxima = np.zeros(n_bins, dtype=np.int64)
    np.maximum.at(maxima, index, latency)
    flushed = np.zeros(n_bins, dtype=np.int64)
    for t, pages in flushes:
        flushed[min(t // bin_width, n_bins - 1)] += pages

    bins = []
    for i in range(n_bins):
        mean = float(sums[i] / counts[i]) if counts[i] else 0.0
        bins.append(TimeBin(i * bin_width, int(counts[i]), mean, int(maxima[i]), int(flushed[i])))
    return bins


@dataclass(frozen=True)
class SummaryRow:
    scenario: str
    workload: str
    mean_ns: Optional[float]
    p99_ns: Optional[int]
    samples: int


def summarize(
    scenario: str, workload: str, samples: Sequence[LatencySample], warmup_ns: int = 0
) -> SummaryRow:
    """Mean and p99 of samples submitted after the warm-up."""
    kept = [s.latency for s in samples if s.submit_time >= warmup_ns]
    if not kept:
        logger.warning(f"No samples for {workload} in {scenario} after warm-up")
        return SummaryRow(scenario, workload, None, None, 0)
    return SummaryRow(
        scenario, workload, float(np.mean(kept)), percentile(kept, 0.99), len(kept)
    )


def wastage(ftl: Ftl) -> WastageReport:
    """Programmed versus skipped pages recorded by the FTL allocators."""
    return ftl.wastage()


class MetricsRecorder:
    """Collects completed requests during a run."""

    def __init__(self):
        self.samples: list[LatencySample] = []
        self.by_workload: dict[str, int] = {}

    def record(self, request: IoRequest) -> None:
        if request.complete_time is None:
            raise SimulationError(f"recording {request!r} before completion")
        if request.complete_time < request.submit_time:
            raise SimulationError(f"{request!r} completed before it was submitted")
        self.samples.append(
            LatencySample(request.workload, request.kind, request.submit_time, request.complete_time)
        )
        self.by_workload[request.workload] = self.by_workload.get(request.workload, 0) + 1

    def for_workload(self, workload: str) -> list[LatencySample]:
        return [s for s in self.samples if s.workload == workload]
