"""Synthetic workload generators and co-run presets."""
import logging
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
from pydantic import ValidationError

from app.errors import ConfigError
from app.models import IoRequest, RequestKind, Urgency
from app.schemas import WorkloadClass, WorkloadSpec
from app.services.engine import Engine, EventKind
from app.utils.presets import UNGZIP, get_all_presets, get_latency_preset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScenarioPreset:
    """A latency-critical workload co-run with one throughput writer."""

    latency: WorkloadSpec
    throughput: WorkloadSpec


def _build_spec(fields: dict, section: str) -> WorkloadSpec:
    try:
        return WorkloadSpec(**fields)
    except ValidationError as exc:
        error = exc.errors()[0]
        loc = ".".join(str(part) for part in error["loc"])
        raise ConfigError(f"workload.{section}.{loc}", error["msg"]) from None


def preset(
    name: str,
    latency_overrides: Optional[dict] = None,
    throughput_overrides: Optional[dict] = None,
) -> ScenarioPreset:
    """
    Resolve a named co-run.

    Args:
        name: Latency-critical preset name
        latency_overrides: Field overrides for the latency-critical spec
        throughput_overrides: Field overrides for the throughput spec

    Returns:
        Validated preset

    Raises:
        ConfigError: If the name is unknown or an override is invalid
    """
    try:
        latency_fields = get_latency_preset(name)
    except KeyError:
        raise ConfigError(
            "workload.preset", f"unknown preset '{name}', expected one of {get_all_presets()}"
        ) from None
    latency = _build_spec({**latency_fields, **(latency_overrides or {})}, "latency")
    throughput = _build_spec({**UNGZIP, **(throughput_overrides or {})}, "throughput")
    if latency.workload_class is not WorkloadClass.LATENCY_CRITICAL:
        raise ConfigError("workload.latency.workload_class", "must be latency_critical")
    if throughput.workload_class is not WorkloadClass.THROUGHPUT_WRITE:
        raise ConfigError("workload.throughput.workload_class", "must be throughput_write")
    return ScenarioPreset(latency, throughput)


class RequestGenerator:
    """
    Deterministic request stream for one workload.

    Latency-critical specs draw uniform size-aligned LBAs; throughput specs
    write sequentially, wrapping at the footprint end. Arrivals that fall
    in an idle phase move to the start of the next burst.

    Args:
        spec: Workload description
        arrival_rng: Stream for inter-arrival gaps and op/fsync draws
        size_rng: Stream for request sizes and placement
    """

    def __init__(self, spec: WorkloadSpec, arrival_rng: np.random.Generator, size_rng: np.random.Generator):
        self.spec = spec
        self.arrival_rng = arrival_rng
        self.size_rng = size_rng
        weights = np.asarray(spec.size_weights, dtype=float)
        self._size_p = weights / weights.sum()
        self._cursor = spec.footprint_start
        self._next_id = 0

    def _gap(self) -> int:
        spec = self.spec
        if spec.arrival == "open":
            return int(round(self.arrival_rng.exponential(spec.mean_interarrival_ns)))
        return spec.think_time_ns

    def _active_from(self, t: int) -> int:
        spec = self.spec
        if not spec.phased:
            return t
        cycle = spec.burst_ns + spec.idle_ns
        phase = t % cycle
        return t if phase < spec.burst_ns else t - phase + cycle

    def _lba(self, size: int) -> int:
        spec = self.spec
        if spec.workload_class is WorkloadClass.THROUGHPUT_WRITE:
            if self._cursor + size > spec.footprint_end:
                self._cursor = spec.footprint_start
            lba = self._cursor
            self._cursor += size
            return lba
        slots = spec.footprint_pages // size
        return spec.footprint_start + int(self.size_rng.integers(0, slots)) * size

    def generate_next(self, now: int) -> IoRequest:
        """Next request, arriving one gap after `now`."""
        spec = self.spec
        submit_time = self._active_from(now + self._gap())
        kind = RequestKind.READ if self.arrival_rng.random() < spec.op_mix else RequestKind.WRITE
        size = int(self.size_rng.choice(spec.size_pages, p=self._size_p))
        fsync = kind is RequestKind.WRITE and self.arrival_rng.random() < spec.fsync_fraction
        request = IoRequest(
            request_id=self._next_id,
            workload=spec.name,
            kind=kind,
            lba=self._lba(size),
            length=size,
            submit_time=submit_time,
            urgency=Urgency.FOREGROUND if fsync else Urgency.BACKGROUND,
            fsync=fsync,
        )
        self._next_id += 1
        return request


class WorkloadRunner:
    """
    Feeds one generator into the host until `end_time`.

    Open-loop workloads schedule the next arrival on each arrival;
    closed-loop ones on each completion.

    Args:
        spec: Workload description
        engine: Event loop (streams are registered per workload)
        submit: Host entry point taking (request, on_complete)
        record: Called with every completed request
        end_time: No request arrives after this instant
    """

    def __init__(
        self,
        spec: WorkloadSpec,
        engine: Engine,
        submit: Callable[[IoRequest, Callable[[IoRequest], Any]], Any],
        record: Callable[[IoRequest], Any],
        end_time: int,
    ):
        self.spec = spec
        self.engine = engine
        self.submit = submit
        self.record = record
        self.end_time = end_time
        self.generator = RequestGenerator(
            spec,
            engine.register_stream(f"{spec.name}-arrival"),
            engine.register_stream(f"{spec.name}-size"),
        )
        self.issued = 0
        self.completed = 0

    def start(self) -> None:
        self._schedule(self.engine.now())

    def _schedule(self, now: int) -> None:
        request = self.generator.generate_next(now)
        if request.submit_time > self.end_time:
            return
        self.engine.at(request.submit_time, EventKind.REQUEST_ARRIVAL, self._arrive, request)

    def _arrive(self, request: IoRequest) -> None:
        self.issued += 1
        self.submit(request, self._complete)
        if self.spec.arrival == "open":
            self._schedule(self.engine.now())

    def _complete(self, request: IoRequest) -> None:
        self.completed += 1
        self.record(request)
        if self.spec.arrival == "closed":
            self._schedule(self.engine.now())

    def nominal_write_bytes_per_s(self, page_size: int, copy_ns_per_page: int) -> float:
        """Long-run write rate of this workload when nothing stalls."""
        spec = self.spec
        size = spec.mean_size_pages
        write_share = 1.0 - spec.op_mix
        if spec.arrival == "open":
            period = spec.mean_interarrival_ns
        else:
            period = spec.think_time_ns + size * copy_ns_per_page
        return spec.duty_cycle * write_share * size * page_size * 1e9 / period
