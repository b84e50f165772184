"""Workload presets for co-run scenarios.

Request-level parameters are synthetic stand-ins: sizes, rates and mixes
were picked so that a read/update service co-running with a streaming
decompressor exhibits writeback interference. They are not measurements.
Footprints and sizes are in 4 KiB host pages.
"""
from typing import Any, Dict

GIB_HOST_PAGES = (1 << 30) // 4096

# Latency-critical footprint: first 2 GiB of the device
LATENCY_FOOTPRINT = {"footprint_start": 0, "footprint_pages": 2 * GIB_HOST_PAGES}

LATENCY_PRESETS: Dict[str, Dict[str, Any]] = {
    "apache_f": {
        "op_mix": 0.95,
        "mean_interarrival_ns": 2_000_000,
        "size_pages": [1, 2, 4],
        "size_weights": [0.5, 0.3, 0.2],
        "fsync_fraction": 0.0,
    },
    "apache_u": {
        "op_mix": 0.5,
        "mean_interarrival_ns": 2_000_000,
        "size_pages": [1, 2, 4],
        "size_weights": [0.5, 0.3, 0.2],
        "fsync_fraction": 0.1,
    },
    "db_s": {
        "op_mix": 1.0,
        "mean_interarrival_ns": 1_000_000,
        "size_pages": [2],
        "size_weights": [1.0],
        "fsync_fraction": 0.0,
    },
    "db_u": {
        "op_mix": 0.3,
        "mean_interarrival_ns": 1_000_000,
        "size_pages": [2],
        "size_weights": [1.0],
        "fsync_fraction": 0.2,
    },
    "imgserver_f": {
        "op_mix": 0.95,
        "mean_interarrival_ns": 5_000_000,
        "size_pages": [8, 16, 32],
        "size_weights": [0.4, 0.4, 0.2],
        "fsync_fraction": 0.0,
    },
    "imgserver_u": {
        "op_mix": 0.5,
        "mean_interarrival_ns": 5_000_000,
        "size_pages": [8, 16, 32],
        "size_weights": [0.4, 0.4, 0.2],
        "fsync_fraction": 0.1,
    },
}

# Streaming decompression: 128 KiB sequential writes over 4 GiB starting at 2.5 GiB.
# Each archive is written out in a 0.4 s burst of about 94 MiB, one every 7.5 s;
# the long-run rate stays under what sequential programming drains.
UNGZIP: Dict[str, Any] = {
    "name": "ungzip",
    "workload_class": "throughput_write",
    "op_mix": 0.0,
    "arrival": "closed",
    "think_time_ns": 500_000,
    "burst_ns": 400_000_000,
    "idle_ns": 7_100_000_000,
    "size_pages": [32],
    "size_weights": [1.0],
    "footprint_start": 5 * GIB_HOST_PAGES // 2,
    "footprint_pages": 4 * GIB_HOST_PAGES,
    "fsync_fraction": 0.0,
}


def normalize_name(name: str) -> str:
    """Normalize a preset name: lower case, dashes and spaces to underscores."""
    return name.strip().lower().replace(" ", "_").replace("-", "_")


def get_latency_preset(name: str) -> Dict[str, Any]:
    """
    Field values of a latency-critical preset.

    Args:
        name: Preset name, e.g. "apache-u" or "DB_S"

    Returns:
        WorkloadSpec keyword arguments

    Raises:
        KeyError: If the name matches no preset
    """
    key = normalize_name(name)
    if key not in LATENCY_PRESETS:
        raise KeyError(name)
    return {
        "name": key.replace("_", "-"),
        "workload_class": "latency_critical",
        "arrival": "open",
        **LATENCY_FOOTPRINT,
        **LATENCY_PRESETS[key],
    }


def get_all_presets() -> list[str]:
    """Names of every latency-critical preset, in CLI spelling."""
    return [key.replace("_", "-") for key in LATENCY_PRESETS]
