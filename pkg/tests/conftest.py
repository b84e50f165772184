"""Pytest configuration and fixtures."""
import os
import sys

import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from app.schemas import (
    BufferConfig,
    DrainDiscipline,
    FlashGeometry,
    FtlConfig,
    FtlPolicy,
    LatencyTable,
)
from app.services.buffer import InternalBuffer
from app.services.engine import Engine
from app.services.flash import FlashArray
from app.services.ftl import Ftl

MIB = 1 << 20


def tiny_geometry(**overrides) -> FlashGeometry:
    """2 dies on 2 channels, 8 blocks per die, 20 pages per block."""
    fields = dict(
        channels=2,
        packages_per_channel=1,
        dies_per_package=1,
        planes_per_die=2,
        blocks_per_plane=4,
        pages_per_block=20,
        page_size=8192,
        n_meta=8,
        n_state=3,
    )
    fields.update(overrides)
    return FlashGeometry(**fields)


def tiny_scenario(tmp_dir: str, **overrides) -> dict:
    """Config dict for a sub-second run on a small device."""
    data = {
        "system": "fd",
        "duration_s": 0.5,
        "seed": 7,
        "output_dir": str(tmp_dir),
        "flash": {
            "geometry": {
                "channels": 2,
                "packages_per_channel": 1,
                "dies_per_package": 1,
                "planes_per_die": 2,
                "blocks_per_plane": 64,
                "pages_per_block": 56,
            }
        },
        "buffer": {"capacity_bytes": 1 * MIB},
        "host": {"memory_bytes": 16 * MIB},
        "workload": {
            "preset": "apache-u",
            "latency": {"footprint_pages": 4096},
            "throughput": {"footprint_start": 8192, "footprint_pages": 8192},
        },
        "metrics": {"warmup_ns": 100_000_000, "bin_width_ns": 50_000_000},
    }
    for key, value in overrides.items():
        data[key] = value
    return data


@pytest.fixture
def engine() -> Engine:
    return Engine(seed=1)


@pytest.fixture
def geometry() -> FlashGeometry:
    return tiny_geometry()


@pytest.fixture
def flash(geometry: FlashGeometry, engine: Engine) -> FlashArray:
    return FlashArray(geometry, LatencyTable(), engine)


@pytest.fixture
def ftl(geometry: FlashGeometry, flash: FlashArray) -> Ftl:
    return Ftl(geometry, FtlConfig(precondition=False), flash, FtlPolicy.LATENCY_AWARE)


@pytest.fixture
def untimed_ftl(geometry: FlashGeometry) -> Ftl:
    """FTL without a flash array: allocation and mapping only."""
    return Ftl(geometry, FtlConfig(precondition=False), None, FtlPolicy.SEQUENTIAL)


@pytest.fixture
def make_buffer(engine: Engine, flash: FlashArray, ftl: Ftl):
    """Factory for buffers of a given page capacity over the tiny stack."""

    def _make(capacity_pages: int = 10, discipline=DrainDiscipline.WATERMARK, **fields):
        config = BufferConfig(capacity_bytes=capacity_pages * 8192, **fields)
        return InternalBuffer(config, 8192, engine, ftl, flash, discipline, 100_000_000)

    return _make
