"""Tests for latency statistics and time-series binning."""
import numpy as np
import pytest

from app.errors import SimulationError
from app.models import IoRequest, LatencySample, RequestKind, WastageReport
from app.services.metrics import MetricsRecorder, percentile, summarize, timeseries, wastage


def _sample(submit: int, latency: int, workload: str = "db-s") -> LatencySample:
    return LatencySample(workload, RequestKind.READ, submit, submit + latency)


@pytest.mark.parametrize(
    "samples,p,expected",
    [
        (list(range(1, 101)), 0.99, 99),
        (list(range(100, 0, -1)), 0.99, 99),
        ([5], 0.99, 5),
        ([4, 1, 3, 2], 0.5, 2),
        ([4, 1, 3, 2], 1.0, 4),
        ([7, 7, 7], 0.01, 7),
    ],
)
def test_percentile_examples(samples, p, expected):
    assert percentile(samples, p) == expected


def test_percentile_matches_sort_oracle():
    rng = np.random.default_rng(11)
    for _ in range(1_000):
        n = int(rng.integers(1, 300))
        samples = rng.integers(0, 10**9, size=n).tolist()
        expected = sorted(samples)[-(-99 * n // 100) - 1]
        assert percentile(samples, 0.99) == expected


def test_percentile_rejects_empty_and_bad_rank():
    with pytest.raises(SimulationError):
        percentile([], 0.99)
    with pytest.raises(SimulationError):
        percentile([1], 0.0)
    with pytest.raises(SimulationError):
        percentile([1], 1.5)


def test_timeseries_bins_by_submit_time():
    samples = [_sample(10, 100), _sample(40, 300), _sample(130, 50)]
    bins = timeseries(samples, 50, flush_log=[(60, 1024), (70, 8)], end_time=200)
    assert [b.bin_start for b in bins] == [0, 50, 100, 150]
    assert [b.count for b in bins] == [2, 0, 1, 0]
    assert bins[0].mean_latency == 200.0
    assert bins[0].max_latency == 300
    assert bins[1].mean_latency == 0.0
    assert [b.flushed_pages for b in bins] == [0, 1032, 0, 0]


def test_timeseries_extends_to_last_event():
    bins = timeseries([_sample(10, 5)], 50, flush_log=[(260, 4)])
    assert len(bins) == 6
    assert bins[-1].flushed_pages == 4


def test_timeseries_empty_has_one_bin():
    bins = timeseries([], 50)
    assert len(bins) == 1
    assert bins[0].count == 0


def test_timeseries_rejects_zero_width():
    with pytest.raises(SimulationError):
        timeseries([], 0)


def test_summarize_drops_warmup():
    samples = [_sample(0, 1_000_000)] + [_sample(100 + i, 10) for i in range(100)]
    row = summarize("fd", "db-s", samples, warmup_ns=100)
    assert row.samples == 100
    assert row.mean_ns == 10.0
    assert row.p99_ns == 10


def test_summarize_without_samples_is_empty_row():
    row = summarize("fd", "db-s", [_sample(0, 5)], warmup_ns=10)
    assert row.samples == 0
    assert row.mean_ns is None and row.p99_ns is None


def test_recorder_groups_by_workload():
    recorder = MetricsRecorder()
    for i, name in enumerate(["db-s", "ungzip", "db-s"]):
        request = IoRequest(i, name, RequestKind.WRITE, 0, 1, i, complete_time=i + 5)
        recorder.record(request)
    assert recorder.by_workload == {"db-s": 2, "ungzip": 1}
    assert [s.latency for s in recorder.for_workload("db-s")] == [5, 5]


def test_recorder_rejects_incomplete_request():
    recorder = MetricsRecorder()
    with pytest.raises(SimulationError):
        recorder.record(IoRequest(0, "db-s", RequestKind.READ, 0, 1, 0))
    with pytest.raises(SimulationError):
        recorder.record(IoRequest(0, "db-s", RequestKind.READ, 0, 1, 10, complete_time=5))


def test_utilization():
    assert WastageReport("write_point", 40, 10).utilization == 0.8
    assert WastageReport("sequential", 0, 0).utilization == 1.0


def test_wastage_reads_ftl_counters(untimed_ftl):
    for lpn in range(30):
        untimed_ftl.program(lpn)
    report = wastage(untimed_ftl)
    assert report.used_pages == 30
    assert report.wasted_pages == 0
    assert report.utilization == 1.0
