"""Host kernel model: page cache, writeback, dirty-ratio switching and I/O dispatch."""
import logging
import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from app.errors import SimulationError
from app.models import (
    BufferStatus,
    IoRequest,
    RequestKind,
    TaggedCommand,
    TaggedCompletion,
    VictimHint,
)
from app.schemas import HostConfig, RatioSet
from app.services.engine import Engine, EventKind
from app.services.nvme import QueuePair, decode_sq_head

logger = logging.getLogger(__name__)


class FlushMode(str, Enum):
    NONE = "none"
    BACKGROUND = "background"
    FOREGROUND = "foreground"


class PageCache:
    """
    Host page cache over host pages.

    Pages are clean, dirty, or under writeback. A page rewritten while
    under writeback is dirty again and stays dirty after the writeback
    completes.

    Args:
        total_pages: Capacity in host pages
    """

    def __init__(self, total_pages: int):
        if total_pages <= 0:
            raise SimulationError("page cache needs at least one page")
        self.total_pages = total_pages
        self.clean: OrderedDict[int, None] = OrderedDict()
        self.dirty: OrderedDict[int, int] = OrderedDict()
        self.writeback: set[int] = set()
        self._both = 0
        self.evictions = 0

    @property
    def dirty_count(self) -> int:
        """Dirty pages including those under writeback."""
        return len(self.dirty) + len(self.writeback) - self._both

    @property
    def resident_count(self) -> int:
        return len(self.clean) + self.dirty_count

    @property
    def dirty_fraction(self) -> float:
        return self.dirty_count / self.total_pages

    def contains(self, hpn: int) -> bool:
        return hpn in self.clean or hpn in self.dirty or hpn in self.writeback

    def touch(self, hpn: int) -> None:
        if hpn in self.clean:
            self.clean.move_to_end(hpn)

    def free_slots(self) -> int:
        return self.total_pages - self.resident_count + len(self.clean)

    def _make_room(self) -> bool:
        if self.resident_count < self.total_pages:
            return True
        if not self.clean:
            return False
        self.clean.popitem(last=False)
        self.evictions += 1
        return True

    def cache_write(self, hpn: int, now: int) -> bool:
        """
        Dirty one page.

        Returns:
            False if the cache is full of dirty pages and the writer must stall
        """
        if hpn in self.dirty:
            return True
        if hpn in self.clean:
            del self.clean[hpn]
        elif hpn in self.writeback:
            self._both += 1
        elif not self._make_room():
            return False
        self.dirty[hpn] = now
        return True

    def insert_clean(self, hpn: int) -> None:
        """Cache a page read from the device; skipped when nothing can be evicted."""
        if self.contains(hpn):
            self.touch(hpn)
        elif self._make_room():
            self.clean[hpn] = None

    def oldest_dirty_age(self, now: int) -> int:
        if not self.dirty:
            return 0
        return now - next(iter(self.dirty.values()))

    def select_oldest(self, count: int) -> list[int]:
        """Move up to `count` oldest dirty pages not already under writeback into writeback."""
        chosen: list[int] = []
        for hpn in self.dirty:
            if len(chosen) >= count:
                break
            if hpn not in self.writeback:
                chosen.append(hpn)
        for hpn in chosen:
            del self.dirty[hpn]
            self.writeback.add(hpn)
        return chosen

    def take(self, hpns: list[int]) -> list[int]:
        """Move specific dirty pages into writeback; returns those moved."""
        moved = [h for h in hpns if h in self.dirty and h not in self.writeback]
        for hpn in moved:
            del self.dirty[hpn]
            self.writeback.add(hpn)
        return moved

    def writeback_done(self, hpns: list[int]) -> None:
        """Clean pages whose flush command completed."""
        for hpn in hpns:
            self.writeback.discard(hpn)
            if hpn in self.dirty:
                self._both -= 1
            elif self._make_room_for_clean():
                self.clean[hpn] = None

    def _make_room_for_clean(self) -> bool:
        return self.resident_count < self.total_pages

    def check_invariants(self) -> None:
        if not 0 <= self.dirty_count <= self.resident_count <= self.total_pages:
            raise SimulationError(
                f"page cache counts out of order: dirty {self.dirty_count}, "
                f"resident {self.resident_count}, total {self.total_pages}"
            )


@dataclass(slots=True)
class PendingCommand:
    """A device command waiting in the dispatch queue."""

    kind: RequestKind
    lba: int
    length_pages: int
    hint: VictimHint
    callback: Callable[[], Any]


class DispatchQueue:
    """Read-prioritizing dispatch with a write-starvation guard."""

    def __init__(self, starvation_limit: int = 8):
        self.starvation_limit = starvation_limit
        self.reads: deque[PendingCommand] = deque()
        self.writes: deque[PendingCommand] = deque()
        self._consecutive_reads = 0

    def __len__(self) -> int:
        return len(self.reads) + len(self.writes)

    def push(self, item: PendingCommand) -> None:
        (self.reads if item.kind is RequestKind.READ else self.writes).append(item)

    def dispatch(self) -> PendingCommand:
        if not self:
            raise SimulationError("dispatch from an empty queue")
        if self.reads and (not self.writes or self._consecutive_reads < self.starvation_limit):
            self._consecutive_reads += 1
            return self.reads.popleft()
        self._consecutive_reads = 0
        return self.writes.popleft()


@dataclass
class FlushBatch:
    """One victimization batch in flight."""

    hpns: list[int]
    foreground: bool
    remaining: int = 0
    on_done: Optional[Callable[[], Any]] = None


@dataclass
class WritebackState:
    active_ratio_set: str = "low"
    flushers_busy: int = 0
    foreground_active: bool = False
    # back on the low set with more dirty pages than it allows
    catching_up: bool = False
    suspended: deque = field(default_factory=deque)


def device_runs(lpns: list[int], max_pages: int) -> list[tuple[int, int]]:
    """Split sorted unique device pages into (start, length) runs of at most `max_pages`."""
    runs: list[tuple[int, int]] = []
    for lpn in lpns:
        if runs and runs[-1][0] + runs[-1][1] == lpn and runs[-1][1] < max_pages:
            start, length = runs[-1]
            runs[-1] = (start, length + 1)
        else:
            runs.append((lpn, 1))
    return runs


class HostKernel:
    """
    Host storage stack above the NVMe driver.

    Args:
        config: Host section of the scenario config
        engine: Event loop
        queue: NVMe queue pair
        host_pages_per_device_page: Host pages per device page
        tag_victimization: Attach victimization hints to flush commands
        adaptive_ratios: Switch ratio sets on the device's buffer status
    """

    def __init__(
        self,
        config: HostConfig,
        engine: Engine,
        queue: QueuePair,
        host_pages_per_device_page: int = 2,
        tag_victimization: bool = True,
        adaptive_ratios: bool = True,
    ):
        self.config = config
        self.engine = engine
        self.queue = queue
        self.ratio = host_pages_per_device_page
        self.tag_victimization = tag_victimization
        self.adaptive_ratios = adaptive_ratios
        self.cache = PageCache(config.total_pages)
        self.dispatcher = DispatchQueue(config.read_starvation_limit)
        self.state = WritebackState()
        self._issued: dict[int, PendingCommand] = {}
        self._writeback_waiters: list[tuple[set[int], Callable[[], Any]]] = []
        self.queue.on_interrupt = self.on_interrupt

        self.flush_log: list[tuple[int, int]] = []
        self.foreground_flushes = 0
        self.background_flushes = 0
        self.ratio_switches = 0
        self.dispatch_stalls = 0
        self._timer = None

    # Ratio sets

    @property
    def ratios(self) -> RatioSet:
        return self.config.high_set if self.state.active_ratio_set == "high" else self.config.low_set

    def on_buffer_status(self, status: BufferStatus) -> None:
        """
        FULL selects the high ratio set, OK the low one.

        Dirty pages held back under the high set drain through background
        batches after the switch back; writers are only suspended if the
        high set's dirty ratio is crossed meanwhile.
        """
        wanted = "high" if status is BufferStatus.FULL else "low"
        if wanted == self.state.active_ratio_set:
            return
        self.state.active_ratio_set = wanted
        self.ratio_switches += 1
        logger.debug(f"Ratio set switched to {wanted} at {self.engine.now()} ns")
        if wanted == "high":
            self.state.catching_up = False
            return
        self.state.catching_up = self.cache.dirty_fraction > self.config.low_set.dirty_ratio
        self._maybe_flush()

    def _foreground_ratio(self) -> float:
        if self.state.catching_up:
            if self.cache.dirty_fraction > self.config.low_set.dirty_ratio:
                return self.config.high_set.dirty_ratio
            self.state.catching_up = False
        return self.ratios.dirty_ratio

    # Thresholds and flushing

    def check_thresholds(self, now: int) -> FlushMode:
        fraction = self.cache.dirty_fraction
        if fraction > self._foreground_ratio():
            return FlushMode.FOREGROUND
        if (
            fraction > self.ratios.dirty_background_ratio
            or self.cache.oldest_dirty_age(now) > self.config.dirty_expire_ns
        ):
            return FlushMode.BACKGROUND
        return FlushMode.NONE

    def start_timer(self) -> None:
        self._timer = self.engine.after(
            self.config.check_interval_ns, EventKind.FLUSH_CHECK, self._on_timer
        )

    def stop_timer(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    def _on_timer(self) -> None:
        self._maybe_flush()
        self.start_timer()

    def _maybe_flush(self) -> None:
        mode = self.check_thresholds(self.engine.now())
        if mode is FlushMode.FOREGROUND and not self.state.foreground_active:
            self.flush_batch(mode)
        elif mode is FlushMode.BACKGROUND and self.state.flushers_busy < self.config.flusher_threads:
            self.flush_batch(mode)

    def flush_target(self, mode: FlushMode) -> int:
        """Host pages a batch of `mode` should flush."""
        if mode is FlushMode.NONE:
            return 0
        if mode is FlushMode.BACKGROUND:
            return self.config.background_batch_pages
        # catching up, writers wait only for the high set's excess
        ratios = self.config.high_set if self.state.catching_up else self.ratios
        floor = math.floor(ratios.dirty_background_ratio * self.cache.total_pages)
        return max(0, self.cache.dirty_count - floor - len(self.cache.writeback))

    def flush_batch(self, mode: FlushMode) -> list[TaggedCommand]:
        """
        Victimize the oldest dirty pages.

        Args:
            mode: Background takes a fixed batch; foreground flushes down to
                the background ratio and suspends writers until done

        Returns:
            Commands queued for dispatch
        """
        hpns = self.cache.select_oldest(self.flush_target(mode))
        if not hpns:
            return []
        foreground = mode is FlushMode.FOREGROUND
        batch = FlushBatch(hpns, foreground)
        if foreground:
            self.state.foreground_active = True
            self.foreground_flushes += 1
        else:
            self.background_flushes += 1
        self.state.flushers_busy += 1
        batch.on_done = lambda: self._on_flush_done(batch)
        logger.debug(f"{mode.value} flush of {len(hpns)} pages at {self.engine.now()} ns")
        return self._issue_batch(batch)

    def flush_pages(self, hpns: list[int], on_done: Callable[[], Any]) -> None:
        """
        Synchronously flush specific pages (fsync).

        Pages already under writeback are waited for first; any of them
        rewritten meanwhile are then flushed again.
        """
        inflight = {h for h in hpns if h in self.cache.writeback}
        if inflight:
            self._writeback_waiters.append((inflight, lambda: self.flush_pages(hpns, on_done)))
            return
        moved = self.cache.take(hpns)
        if not moved:
            on_done()
            return
        batch = FlushBatch(moved, True)

        def done() -> None:
            self._writeback_finished(batch.hpns)
            on_done()

        batch.on_done = done
        self._issue_batch(batch)

    def _writeback_finished(self, hpns: list[int]) -> None:
        self.cache.writeback_done(hpns)
        if not self._writeback_waiters:
            return
        finished = set(hpns)
        ready = []
        waiting = []
        for pending, resume in self._writeback_waiters:
            pending -= finished
            (waiting if pending else ready).append((pending, resume))
        self._writeback_waiters = waiting
        for _, resume in ready:
            resume()

    def _issue_batch(self, batch: FlushBatch) -> list[TaggedCommand]:
        self.flush_log.append((self.engine.now(), len(batch.hpns)))
        lpns = sorted({h // self.ratio for h in batch.hpns})
        runs = device_runs(lpns, self.config.max_command_pages)
        batch.remaining = len(runs)
        commands = []
        for i, (lba, length) in enumerate(runs):
            if i == 0 and self.tag_victimization:
                hint = VictimHint(True, len(batch.hpns))
            else:
                hint = VictimHint()
            pending = PendingCommand(RequestKind.WRITE, lba, length, hint, lambda: self._on_batch_command(batch))
            self.dispatcher.push(pending)
            commands.append(TaggedCommand(-1, RequestKind.WRITE, lba, length, hint))
        self.pump()
        return commands

    def _on_batch_command(self, batch: FlushBatch) -> None:
        batch.remaining -= 1
        if batch.remaining == 0 and batch.on_done is not None:
            batch.on_done()

    def _on_flush_done(self, batch: FlushBatch) -> None:
        self.state.flushers_busy -= 1
        if batch.foreground:
            self.state.foreground_active = False
        self._writeback_finished(batch.hpns)
        self._resume_writers()
        self._maybe_flush()

    # Application requests

    def submit_request(self, req: IoRequest, on_complete: Callable[[IoRequest], Any]) -> None:
        """Serve a workload request; `on_complete` fires with `complete_time` set."""
        if req.kind is RequestKind.READ:
            self._read(req, on_complete)
        else:
            self._write(req, on_complete)

    def _finish(self, req: IoRequest, on_complete: Callable[[IoRequest], Any]) -> None:
        req.complete_time = self.engine.now()
        on_complete(req)

    def _read(self, req: IoRequest, on_complete: Callable[[IoRequest], Any]) -> None:
        hpns = range(req.lba, req.lba + req.length)
        misses = [h for h in hpns if not self.cache.contains(h)]
        for h in hpns:
            self.cache.touch(h)
        copy_ns = self.config.copy_ns_per_page * req.length
        if not misses:
            self.engine.after(copy_ns, EventKind.TIMER, self._finish, req, on_complete)
            return
        runs = device_runs(sorted({h // self.ratio for h in misses}), self.config.max_command_pages)
        remaining = [len(runs)]

        def run_done() -> None:
            remaining[0] -= 1
            if remaining[0]:
                return
            for h in misses:
                self.cache.insert_clean(h)
            self.engine.after(copy_ns, EventKind.TIMER, self._finish, req, on_complete)

        for lba, length in runs:
            self.dispatcher.push(PendingCommand(RequestKind.READ, lba, length, VictimHint(), run_done))
        self.pump()

    def _write(self, req: IoRequest, on_complete: Callable[[IoRequest], Any]) -> None:
        if self.state.foreground_active or self.state.suspended or not self._try_write(req, on_complete):
            self.state.suspended.append((req, on_complete))

    def _try_write(self, req: IoRequest, on_complete: Callable[[IoRequest], Any]) -> bool:
        hpns = range(req.lba, req.lba + req.length)
        needed = sum(1 for h in hpns if h not in self.cache.dirty)
        if needed > self.cache.free_slots():
            if not self.state.foreground_active:
                self.flush_batch(FlushMode.FOREGROUND)
            return False
        now = self.engine.now()
        for h in hpns:
            self.cache.cache_write(h, now)
        copy_ns = self.config.copy_ns_per_page * req.length
        if req.fsync:
            self.engine.after(copy_ns, EventKind.TIMER, self._fsync, req, on_complete)
        else:
            self.engine.after(copy_ns, EventKind.TIMER, self._finish, req, on_complete)
        self._maybe_flush()
        return True

    def _fsync(self, req: IoRequest, on_complete: Callable[[IoRequest], Any]) -> None:
        def synced() -> None:
            self._finish(req, on_complete)
            self._resume_writers()

        self.flush_pages(list(range(req.lba, req.lba + req.length)), synced)

    def _resume_writers(self) -> None:
        suspended = self.state.suspended
        while suspended and not self.state.foreground_active:
            req, on_complete = suspended.popleft()
            if not self._try_write(req, on_complete):
                suspended.appendleft((req, on_complete))
                break

    # Driver

    def pump(self) -> int:
        """Move queued commands into the submission queue; returns the count."""
        submitted = 0
        while self.dispatcher and self.queue.can_submit():
            item = self.dispatcher.dispatch()
            cid = self.queue.allocate_command_id()
            self.queue.submit(TaggedCommand(cid, item.kind, item.lba, item.length_pages, item.hint))
            self._issued[cid] = item
            submitted += 1
        if self.dispatcher and not self.queue.can_submit():
            self.dispatch_stalls += 1
        if submitted:
            self.queue.ring_sq_doorbell()
        return submitted

    def on_interrupt(self, completion: TaggedCompletion) -> None:
        _, status = decode_sq_head(completion.sq_head_field)
        if self.adaptive_ratios:
            self.on_buffer_status(status)
        item = self._issued.pop(completion.command_id)
        item.callback()
        self.pump()

    def check_invariants(self) -> None:
        self.cache.check_invariants()
        if self.adaptive_ratios is False and self.state.active_ratio_set != "low":
            raise SimulationError("ratio set changed without the status upcall")
