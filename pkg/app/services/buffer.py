"""SSD internal DRAM write buffer with watermark-driven eviction."""
import logging
from collections import Counter, OrderedDict, deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional

from app.errors import SimulationError
from app.models import BufferStatus, Urgency
from app.schemas import BufferConfig, DrainDiscipline
from app.services.engine import Engine, EventKind
from app.services.flash import FlashArray
from app.services.ftl import Ftl

logger = logging.getLogger(__name__)


class SlotOrigin(str, Enum):
    VICTIMIZATION = "victimization"
    REGULAR = "regular"


class EvictionMode(str, Enum):
    BACKGROUND = "background"
    FOREGROUND = "foreground"


@dataclass(slots=True)
class BufferSlot:
    lpn: int
    admit_time: int
    origin: SlotOrigin


@dataclass(slots=True)
class _Waiter:
    lpn: int
    origin: SlotOrigin
    callback: Optional[Callable[..., Any]]
    payload: tuple
    since: int


class InternalBuffer:
    """
    Write-back buffer in front of the FTL.

    Occupancy counts buffered slots plus pages whose program is still in
    flight; a slot is released only when its program completes.

    Args:
        config: Buffer section of the scenario config
        page_size: Device page size in bytes
        engine: Event loop
        ftl: FTL programs are issued through
        flash: Flash array consulted for idle dies
        discipline: Drain discipline
        idle_window_ns: Trailing window for intensive-die detection
    """

    def __init__(
        self,
        config: BufferConfig,
        page_size: int,
        engine: Engine,
        ftl: Ftl,
        flash: FlashArray,
        discipline: DrainDiscipline = DrainDiscipline.WATERMARK,
        idle_window_ns: int = 100_000_000,
    ):
        self.config = config
        self.engine = engine
        self.ftl = ftl
        self.flash = flash
        self.discipline = discipline
        self.idle_window_ns = idle_window_ns
        self.capacity_pages: Optional[int] = (
            None if config.unbounded else max(1, config.capacity_bytes // page_size)
        )
        self.high_threshold = config.high_threshold
        self.low_threshold = config.low_threshold

        self.slots: OrderedDict[int, BufferSlot] = OrderedDict()
        self.waiters: deque[_Waiter] = deque()
        self.evicting = 0
        self._evicting_lpns: Counter = Counter()
        self.inflight = [0] * flash.geometry.n_dies

        self.mode = EvictionMode.BACKGROUND
        self._status = BufferStatus.OK
        self._bg_event = None

        self.admitted = 0
        self.superseded = 0
        self.programmed = 0
        self.stalls = 0
        self.foreground_rounds = 0

    # Occupancy

    @property
    def occupancy(self) -> int:
        return len(self.slots) + self.evicting

    @property
    def fraction(self) -> float:
        if self.capacity_pages is None:
            return 0.0
        return self.occupancy / self.capacity_pages

    def is_full(self) -> bool:
        return self.capacity_pages is not None and self.occupancy >= self.capacity_pages

    def contains(self, lpn: int) -> bool:
        """Whether a read of `lpn` is served from DRAM."""
        return lpn in self.slots or self._evicting_lpns[lpn] > 0

    def estimate_future_usage(self, incoming_dirty_pages: int) -> float:
        """Usage fraction after `incoming_dirty_pages` more pages arrive, uncapped."""
        if incoming_dirty_pages < 0:
            raise SimulationError("incoming dirty page count must be non-negative")
        if self.capacity_pages is None:
            return 0.0
        return (self.occupancy + incoming_dirty_pages) / self.capacity_pages

    def status(self) -> BufferStatus:
        return self._status

    def _update_status(self) -> None:
        fraction = self.fraction
        if self._status is BufferStatus.OK and fraction > self.high_threshold:
            self._status = BufferStatus.FULL
            logger.debug(f"Buffer FULL at {fraction:.3f}")
        elif self._status is BufferStatus.FULL and fraction <= self.low_threshold:
            self._status = BufferStatus.OK
            logger.debug(f"Buffer OK at {fraction:.3f}")

    # Admission

    def admit(
        self,
        lpn: int,
        origin: SlotOrigin = SlotOrigin.REGULAR,
        callback: Optional[Callable[..., Any]] = None,
        *payload,
    ) -> bool:
        """
        Buffer one device page.

        Args:
            lpn: Logical page number
            origin: Whether the page arrived in a victimization batch
            callback: Called with `payload` once the page is buffered

        Returns:
            True if buffered now, False if the write stalls for space
        """
        if lpn in self.slots:
            self._overwrite(lpn, origin)
        elif self.is_full():
            self.stalls += 1
            self.waiters.append(_Waiter(lpn, origin, callback, payload, self.engine.now()))
            self._after_admission()
            return False
        else:
            self._insert(lpn, origin)
        self._after_admission()
        if callback is not None:
            self.engine.after(self.config.admit_ns_per_page, EventKind.TIMER, callback, *payload)
        return True

    def _overwrite(self, lpn: int, origin: SlotOrigin) -> None:
        self.admitted += 1
        self.superseded += 1
        slot = self.slots[lpn]
        slot.origin = origin

    def _insert(self, lpn: int, origin: SlotOrigin) -> None:
        self.admitted += 1
        self.slots[lpn] = BufferSlot(lpn, self.engine.now(), origin)

    def _after_admission(self) -> None:
        self._update_status()
        if self.discipline is DrainDiscipline.CONTINUOUS:
            self._pump_continuous()
        elif self.mode is EvictionMode.FOREGROUND:
            self._pump_foreground()
        elif self.fraction > self.high_threshold:
            self.foreground_evict()
        else:
            self._ensure_background()

    def _admit_waiters(self) -> None:
        while self.waiters and not self.is_full():
            waiter = self.waiters.popleft()
            if waiter.lpn in self.slots:
                self._overwrite(waiter.lpn, waiter.origin)
            else:
                self._insert(waiter.lpn, waiter.origin)
            if waiter.callback is not None:
                self.engine.after(
                    self.config.admit_ns_per_page, EventKind.TIMER, waiter.callback, *waiter.payload
                )

    # Eviction

    def on_victimization_notice(self, dirty_page_count: int) -> EvictionMode:
        """
        Pick the eviction mode for an announced victimization batch.

        Args:
            dirty_page_count: Incoming dirty device pages

        Returns:
            Mode engaged
        """
        if self.estimate_future_usage(dirty_page_count) > self.high_threshold:
            self.foreground_evict()
        else:
            self._ensure_background()
        return self.mode

    def _program(self, die: int, urgency: Urgency) -> None:
        _, slot = self.slots.popitem(last=False)
        self.evicting += 1
        self._evicting_lpns[slot.lpn] += 1
        self.inflight[die] += 1
        self.ftl.program(slot.lpn, urgency, None, die, None, self._on_programmed, slot.lpn, die)

    def _on_programmed(self, lpn: int, die: int) -> None:
        self.evicting -= 1
        self._evicting_lpns[lpn] -= 1
        if not self._evicting_lpns[lpn]:
            del self._evicting_lpns[lpn]
        self.inflight[die] -= 1
        self.programmed += 1
        self._admit_waiters()
        self._update_status()
        if self.discipline is DrainDiscipline.CONTINUOUS:
            self._pump_continuous()
        elif self.mode is EvictionMode.FOREGROUND:
            self._pump_foreground()
        else:
            self._ensure_background()

    def background_evict(self) -> int:
        """
        Send the oldest slots to currently idle dies, one program per die.

        Returns:
            Programs issued
        """
        self._bg_event = None
        if self.mode is not EvictionMode.BACKGROUND or not self.slots:
            return 0
        now = self.engine.now()
        issued = 0
        for die in self.flash.idle_dies(now, self.idle_window_ns):
            if not self.slots:
                break
            self._program(die, Urgency.BACKGROUND)
            issued += 1
        self._ensure_background()
        return issued

    def _ensure_background(self) -> None:
        if self._bg_event is not None or not self.slots:
            return
        if self.discipline is not DrainDiscipline.WATERMARK or self.mode is not EvictionMode.BACKGROUND:
            return
        self._bg_event = self.engine.after(
            self.config.background_period_ns, EventKind.BUFFER_DRAIN, self.background_evict
        )

    def foreground_evict(self) -> int:
        """
        Engage foreground eviction: keep every die's queue primed until
        usage drops below the low threshold.

        Returns:
            Programs issued by this call
        """
        if self.mode is not EvictionMode.FOREGROUND:
            self.mode = EvictionMode.FOREGROUND
            self.foreground_rounds += 1
            if self._bg_event is not None:
                self._bg_event.cancel()
                self._bg_event = None
            logger.debug(f"Foreground eviction engaged at {self.fraction:.3f}")
        return self._pump_foreground()

    def _pump_foreground(self) -> int:
        if self.fraction < self.low_threshold:
            self.mode = EvictionMode.BACKGROUND
            logger.debug(f"Foreground eviction released at {self.fraction:.3f}")
            self._ensure_background()
            return 0
        return self._fill_dies(Urgency.FOREGROUND)

    def _pump_continuous(self) -> int:
        if self.fraction <= self.low_threshold:
            return 0
        return self._fill_dies(Urgency.BACKGROUND)

    def _fill_dies(self, urgency: Urgency) -> int:
        issued = 0
        depth = self.config.drain_depth
        progress = True
        while progress and self.slots:
            progress = False
            for die in range(len(self.inflight)):
                if not self.slots:
                    break
                if self.inflight[die] < depth:
                    self._program(die, urgency)
                    issued += 1
                    progress = True
        return issued

    # Audit

    def check_invariants(self) -> None:
        """
        Raises:
            SimulationError: If admitted pages are not conserved or occupancy overflows
        """
        accounted = len(self.slots) + self.evicting + self.programmed + self.superseded
        if accounted != self.admitted:
            raise SimulationError(
                f"buffer conservation broken: admitted {self.admitted}, accounted {accounted}"
            )
        if self.capacity_pages is not None and self.occupancy > self.capacity_pages:
            raise SimulationError(
                f"buffer occupancy {self.occupancy} exceeds capacity {self.capacity_pages}"
            )
