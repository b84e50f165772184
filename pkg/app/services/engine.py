"""Discrete-event core: virtual time, ordered dispatch, named RNG streams."""
import heapq
import logging
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional

import numpy as np

from app.errors import SimulationError

logger = logging.getLogger(__name__)

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


class EventKind(str, Enum):
    """What an event stands for; used in traces and debugging only."""

    REQUEST_ARRIVAL = "request-arrival"
    TRANSACTION_DONE = "transaction-done"
    FLUSH_CHECK = "flush-check"
    BUFFER_DRAIN = "buffer-drain"
    TIMER = "timer"


@dataclass(slots=True)
class Event:
    """A callback due at `fire_at`; `seq` orders equal-time events."""

    fire_at: int
    kind: EventKind
    callback: Optional[Callable[..., Any]] = None
    payload: tuple = ()
    seq: int = -1
    cancelled: bool = False

    def cancel(self) -> None:
        """Tombstone the event; it is skipped at dispatch."""
        self.cancelled = True


@dataclass
class EventQueue:
    """Pending events ordered by (fire_at, seq)."""

    pending: list = field(default_factory=list)

    def push(self, event: Event) -> None:
        heapq.heappush(self.pending, (event.fire_at, event.seq, event))

    def pop(self) -> Event:
        return heapq.heappop(self.pending)[2]

    def peek_time(self) -> Optional[int]:
        return self.pending[0][0] if self.pending else None

    def __len__(self) -> int:
        return len(self.pending)


class Engine:
    """
    Single-threaded event loop owning simulated time.

    Args:
        seed: Global seed every RNG stream is derived from
        streams: Names of the RNG streams modules may draw from
    """

    def __init__(self, seed: int = 0, streams: Iterable[str] = ()):
        self.seed = seed
        self._now = 0
        self._seq = 0
        self._queue = EventQueue()
        self._last_fired = 0
        self.steps = 0
        self._rngs: dict[str, np.random.Generator] = {}
        for name in streams:
            self.register_stream(name)

    def now(self) -> int:
        return self._now

    # Scheduling

    def schedule(self, event: Event) -> Event:
        """
        Queue an event for dispatch.

        Raises:
            SimulationError: If the event lies in the past
        """
        if event.fire_at < self._now:
            raise SimulationError(
                f"cannot schedule {event.kind.value} at {event.fire_at} ns, now is {self._now} ns"
            )
        event.seq = self._seq
        self._seq += 1
        self._queue.push(event)
        return event

    def at(self, fire_at: int, kind: EventKind, callback: Callable[..., Any], *payload) -> Event:
        """Schedule `callback(*payload)` at an absolute time."""
        return self.schedule(Event(fire_at, kind, callback, payload))

    def after(self, delay: int, kind: EventKind, callback: Callable[..., Any], *payload) -> Event:
        """Schedule `callback(*payload)` `delay` ns from now."""
        return self.schedule(Event(self._now + delay, kind, callback, payload))

    def run_until(self, limit: int) -> int:
        """
        Dispatch every event due at or before `limit`.

        Args:
            limit: Last simulated instant to process

        Returns:
            Number of events dispatched by this call
        """
        if limit < self._now:
            raise SimulationError(f"run limit {limit} ns is before now {self._now} ns")
        steps = 0
        queue = self._queue
        while queue.pending and queue.pending[0][0] <= limit:
            event = queue.pop()
            if event.cancelled:
                continue
            if event.fire_at < self._last_fired:
                raise SimulationError(f"time ran backwards at event seq {event.seq}")
            self._now = event.fire_at
            self._last_fired = event.fire_at
            if event.callback is not None:
                event.callback(*event.payload)
            steps += 1
        self._now = limit
        self.steps += steps
        return steps

    def pending(self) -> int:
        return len(self._queue)

    # Randomness

    def register_stream(self, stream_id: str) -> np.random.Generator:
        """Create (or return) the generator for a named stream."""
        if stream_id not in self._rngs:
            key = zlib.crc32(stream_id.encode("utf-8"))
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
            self._rngs[stream_id] = np.random.Generator(np.random.PCG64(seq))
        return self._rngs[stream_id]

    def rng(self, stream_id: str) -> np.random.Generator:
        """
        Generator for a registered stream.

        Raises:
            SimulationError: If the stream was never registered
        """
        try:
            return self._rngs[stream_id]
        except KeyError:
            raise SimulationError(f"unknown RNG stream '{stream_id}'") from None

    def rng_next(self, stream_id: str) -> int:
        """Next uniform 63-bit integer from a stream."""
        return int(self.rng(stream_id).integers(0, 1 << 63))
