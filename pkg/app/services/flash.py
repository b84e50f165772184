"""Flash array model: page classification, latencies and die/channel contention."""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from app.errors import SimulationError
from app.models import FlashAddress, OpKind, PageType
from app.schemas import FlashGeometry, LatencyTable
from app.services.engine import Engine, EventKind

logger = logging.getLogger(__name__)

# The first pages of every block program at LSB speed regardless of the formula
LSB_META_PAGES = 5


def classify_page(page_index: int, geometry: FlashGeometry) -> PageType:
    """
    Speed class of a page from its index within the block.

    Args:
        page_index: Zero-based page index
        geometry: Flash geometry supplying n_meta, planes and n_state

    Returns:
        Page type

    Raises:
        SimulationError: If the index is outside the block
    """
    if not 0 <= page_index < geometry.pages_per_block:
        raise SimulationError(
            f"page index {page_index} outside block of {geometry.pages_per_block} pages"
        )
    n_state = geometry.n_state
    if n_state == 1:
        return PageType.LSB
    if page_index < LSB_META_PAGES:
        return PageType.LSB
    if page_index < geometry.n_meta:
        return PageType.CSB if n_state == 3 else PageType.MSB
    f = ((page_index - geometry.n_meta) // geometry.planes_per_die) % n_state
    if f == 0:
        return PageType.LSB
    if n_state == 2 or f == 2:
        return PageType.MSB
    return PageType.CSB


def op_latency(kind: OpKind, page_type: Optional[PageType], table: LatencyTable) -> int:
    """Array latency of one operation in ns; erase ignores the page type."""
    if kind is OpKind.ERASE:
        return table.erase_ns
    if page_type is None:
        raise SimulationError(f"{kind.value} needs a page type")
    if kind is OpKind.READ:
        return table.read(page_type)
    return table.write(page_type)


@dataclass(slots=True)
class DieState:
    """Occupancy of one die."""

    busy_until: int = 0
    queued_transactions: deque = field(default_factory=deque)
    # (end, busy_ns) of application reads, for intensity estimation
    app_reads: deque = field(default_factory=deque)
    app_busy_ns: int = 0


@dataclass(slots=True)
class TransactionRecord:
    """One scheduled flash transaction, kept when tracing is on."""

    die: int
    channel: int
    kind: OpKind
    page_type: Optional[PageType]
    issue: int
    start: int
    done: int


class FlashArray:
    """
    Die- and channel-level transaction scheduler.

    Dies are numbered channel-first, so consecutive die ids sit on
    different channels.

    Args:
        geometry: Flash geometry
        latency: Latency table
        engine: Event loop completions are scheduled on
        intensive_busy_fraction: Application-read busy share above which a
            die counts as intensively accessed
        trace: Keep a record of every transaction
    """

    def __init__(
        self,
        geometry: FlashGeometry,
        latency: LatencyTable,
        engine: Engine,
        intensive_busy_fraction: float = 1.0,
        trace: bool = False,
    ):
        self.geometry = geometry
        self.latency = latency
        self.engine = engine
        self.intensive_busy_fraction = intensive_busy_fraction
        self.dies = [DieState() for _ in range(geometry.n_dies)]
        self.channel_busy_until = [0] * geometry.channels
        self.trace: Optional[list[TransactionRecord]] = [] if trace else None
        self.counts = {kind: 0 for kind in OpKind}
        self._page_types = [classify_page(p, geometry) for p in range(geometry.pages_per_block)]

    # Addressing

    def die_id(self, channel: int, package: int, die: int) -> int:
        g = self.geometry
        return channel + g.channels * (package + g.packages_per_channel * die)

    def die_coordinates(self, die_id: int) -> tuple[int, int, int]:
        """(channel, package, die) of a die id."""
        g = self.geometry
        channel = die_id % g.channels
        rest = die_id // g.channels
        return channel, rest % g.packages_per_channel, rest // g.packages_per_channel

    def channel_of(self, die_id: int) -> int:
        return die_id % self.geometry.channels

    def address(self, ppn: int) -> FlashAddress:
        """Disassemble a physical page number."""
        g = self.geometry
        page = ppn % g.pages_per_block
        rest = ppn // g.pages_per_block
        block = rest % g.blocks_per_plane
        rest //= g.blocks_per_plane
        plane = rest % g.planes_per_die
        channel, package, die = self.die_coordinates(rest // g.planes_per_die)
        return FlashAddress(channel, package, die, plane, block, page)

    def ppn(self, addr: FlashAddress) -> int:
        """Assemble a physical page number."""
        self.check_address(addr)
        g = self.geometry
        die_id = self.die_id(addr.channel, addr.package, addr.die)
        block_id = (die_id * g.planes_per_die + addr.plane) * g.blocks_per_plane + addr.block
        return block_id * g.pages_per_block + addr.page

    def check_address(self, addr: FlashAddress) -> None:
        g = self.geometry
        bounds = (
            (addr.channel, g.channels),
            (addr.package, g.packages_per_channel),
            (addr.die, g.dies_per_package),
            (addr.plane, g.planes_per_die),
            (addr.block, g.blocks_per_plane),
            (addr.page, g.pages_per_block),
        )
        if any(not 0 <= value < bound for value, bound in bounds):
            raise SimulationError(f"address {addr} outside geometry")

    def page_type(self, page_index: int) -> PageType:
        return self._page_types[page_index]

    # Scheduling

    def submit_transaction(
        self,
        addr: FlashAddress,
        kind: OpKind,
        issue_time: int,
        callback: Optional[Callable[..., Any]] = None,
        *payload,
        application: bool = False,
    ) -> int:
        """
        Reserve die and channel time for one transaction.

        Programs move data over the channel before the array operation;
        reads move it after. Erases never touch the channel.

        Args:
            addr: Target page (page index ignored for erase)
            kind: Operation kind
            issue_time: Earliest start
            callback: Called with `payload` at completion
            application: Transaction serves an application read

        Returns:
            Completion time in ns
        """
        self.check_address(addr)
        die_id = self.die_id(addr.channel, addr.package, addr.die)
        die = self.dies[die_id]
        channel = addr.channel
        xfer = self.latency.channel_xfer_ns_per_page
        page_type = None if kind is OpKind.ERASE else self._page_types[addr.page]
        array_ns = op_latency(kind, page_type, self.latency)

        if kind is OpKind.PROGRAM:
            start = max(issue_time, die.busy_until, self.channel_busy_until[channel])
            self.channel_busy_until[channel] = start + xfer
            done = start + xfer + array_ns
        elif kind is OpKind.READ:
            start = max(issue_time, die.busy_until)
            xfer_start = max(start + array_ns, self.channel_busy_until[channel])
            done = xfer_start + xfer
            self.channel_busy_until[channel] = done
        else:
            start = max(issue_time, die.busy_until)
            done = start + array_ns

        die.busy_until = done
        die.queued_transactions.append(done)
        self.counts[kind] += 1
        if application:
            die.app_reads.append((done, done - start))
            die.app_busy_ns += done - start
        if self.trace is not None:
            self.trace.append(
                TransactionRecord(die_id, channel, kind, page_type, issue_time, start, done)
            )
        self.engine.at(done, EventKind.TRANSACTION_DONE, self._on_done, die, callback, payload)
        return done

    def _on_done(self, die: DieState, callback, payload: tuple) -> None:
        die.queued_transactions.popleft()
        if callback is not None:
            callback(*payload)

    # Queries

    def is_idle(self, die_id: int, at: int) -> bool:
        die = self.dies[die_id]
        return not die.queued_transactions and die.busy_until <= at

    def read_intensity(self, die_id: int, at: int, window: int) -> float:
        """Share of the trailing window the die spent on application reads."""
        die = self.dies[die_id]
        horizon = at - window
        while die.app_reads and die.app_reads[0][0] < horizon:
            _, busy = die.app_reads.popleft()
            die.app_busy_ns -= busy
        return die.app_busy_ns / window

    def idle_dies(self, at: int, window: int) -> list[int]:
        """
        Dies free for background work.

        Args:
            at: Query time
            window: Trailing window for the read-intensity estimate

        Returns:
            Ascending ids of dies with nothing queued, not busy at `at`,
            and not intensively read over the window
        """
        if window <= 0:
            raise SimulationError("idle window must be positive")
        return [
            die_id
            for die_id in range(len(self.dies))
            if self.is_idle(die_id, at)
            and self.read_intensity(die_id, at, window) <= self.intensive_busy_fraction
        ]
