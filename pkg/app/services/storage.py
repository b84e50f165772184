"""Storage service for run artifacts: CSV reports and the run manifest."""
import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

from app.models import LatencySample, WastageReport
from app.schemas import RunManifest
from app.services.metrics import SummaryRow, TimeBin

REQUESTS_COLUMNS = ("workload", "kind", "submit_ns", "complete_ns", "latency_ns")
TIMESERIES_COLUMNS = ("bin_start_ns", "mean_ns", "max_ns", "flushed_pages")
SUMMARY_COLUMNS = ("scenario", "workload", "mean_ns", "p99_ns", "samples")
WASTAGE_COLUMNS = ("policy", "used", "wasted", "utilization")

MANIFEST_NAME = "manifest.json"


def ensure_output_dir(path: str | Path) -> Path:
    """Ensure the output directory exists."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(file_path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(file_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
    return file_path


def save_requests(out_dir: Path, samples: Iterable[LatencySample]) -> Path:
    """
    Save every completed request.

    Args:
        out_dir: Run output directory
        samples: Completed requests in completion order

    Returns:
        Path to requests.csv
    """
    rows = (
        (s.workload, s.kind.value, s.submit_time, s.complete_time, s.latency) for s in samples
    )
    return _write_rows(out_dir / "requests.csv", REQUESTS_COLUMNS, rows)


def save_timeseries(out_dir: Path, bins: Iterable[TimeBin]) -> Path:
    """Save per-bin latency and flush volume."""
    rows = (
        (b.bin_start, f"{b.mean_latency:.1f}", b.max_latency, b.flushed_pages) for b in bins
    )
    return _write_rows(out_dir / "timeseries.csv", TIMESERIES_COLUMNS, rows)


def summary_rows(rows: Iterable[SummaryRow]) -> list[tuple]:
    return [
        (
            r.scenario,
            r.workload,
            "" if r.mean_ns is None else f"{r.mean_ns:.1f}",
            "" if r.p99_ns is None else r.p99_ns,
            r.samples,
        )
        for r in rows
    ]


def save_summary(out_dir: Path, rows: Iterable[SummaryRow]) -> Path:
    """Save mean and p99 per workload; empty cells when no sample survived warm-up."""
    return _write_rows(out_dir / "summary.csv", SUMMARY_COLUMNS, summary_rows(rows))


def save_wastage(out_dir: Path, reports: Iterable[WastageReport]) -> Path:
    """Save used versus wasted flash pages."""
    rows = ((r.policy, r.used_pages, r.wasted_pages, f"{r.utilization:.6f}") for r in reports)
    return _write_rows(out_dir / "wastage.csv", WASTAGE_COLUMNS, rows)


def save_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    """
    Save the run manifest.

    Args:
        out_dir: Run output directory
        manifest: Config echo, seed, version and feature toggles

    Returns:
        Path to manifest.json
    """
    file_path = out_dir / MANIFEST_NAME
    file_path.write_text(
        json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return file_path


def load_manifest(file_path: str | Path) -> RunManifest:
    """Load a manifest written by `save_manifest`."""
    return RunManifest.model_validate_json(Path(file_path).read_text(encoding="utf-8"))
