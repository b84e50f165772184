"""Flash translation layer: mapping, page allocation policies, GC and wear leveling."""
import heapq
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

from app.errors import DeviceFullError, SimulationError
from app.models import FlashAddress, OpKind, PageState, PageType, Urgency, WastageReport
from app.schemas import FlashGeometry, FtlConfig, FtlPolicy
from app.services.flash import FlashArray, classify_page

logger = logging.getLogger(__name__)


class BlockPointer:
    """Per-block allocation record pointing at the next free page."""

    __slots__ = (
        "block_id",
        "die",
        "plane",
        "block",
        "next_free_page",
        "erase_count",
        "invalid_count",
        "live_count",
        "budget_pages",
        "states",
    )

    def __init__(self, block_id: int, die: int, plane: int, block: int, pages_per_block: int):
        self.block_id = block_id
        self.die = die
        self.plane = plane
        self.block = block
        self.next_free_page = 0
        self.erase_count = 0
        self.invalid_count = 0
        self.live_count = 0
        # skipped pages charged to the LSB budget
        self.budget_pages = 0
        self.states = bytearray(pages_per_block)

    def __repr__(self) -> str:
        return (
            f"<BlockPointer(id={self.block_id}, die={self.die}, next={self.next_free_page}, "
            f"invalid={self.invalid_count}, erases={self.erase_count})>"
        )


@dataclass
class LsbBudget:
    """Bytes consumed by LSB-ahead skipping, bounded by the LSB-only region cap."""

    cap_bytes: int
    consumed_bytes: int = 0

    def allows(self, nbytes: int) -> bool:
        return self.consumed_bytes + nbytes <= self.cap_bytes

    def charge(self, nbytes: int) -> None:
        if not self.allows(nbytes):
            raise SimulationError("LSB-only region cap exceeded")
        self.consumed_bytes += nbytes

    def refund(self, nbytes: int) -> None:
        self.consumed_bytes -= nbytes


class Ftl:
    """
    Page-level FTL over a flash array.

    Args:
        geometry: Flash geometry
        config: FTL section of the scenario config
        flash: Transaction scheduler; None runs the FTL without timing
        policy: Default allocation policy for `program`
    """

    def __init__(
        self,
        geometry: FlashGeometry,
        config: FtlConfig,
        flash: Optional[FlashArray] = None,
        policy: FtlPolicy = FtlPolicy.SEQUENTIAL,
    ):
        self.geometry = geometry
        self.config = config
        self.flash = flash
        self.policy = policy
        self.n_dies = geometry.n_dies
        self.pages_per_block = geometry.pages_per_block
        self._page_types = [classify_page(p, geometry) for p in range(geometry.pages_per_block)]
        self._next_lsb = self._build_next_lsb()

        self.logical_pages = int(
            geometry.total_blocks * geometry.user_pages_per_block * (1.0 - config.overprovision)
        )
        blocks_per_die = geometry.blocks_per_die
        self.reserve_blocks = max(1, math.ceil(blocks_per_die * config.gc_reserve_fraction))
        self.gc_trigger_blocks = max(
            self.reserve_blocks + 1, math.ceil(blocks_per_die * config.gc_trigger_fraction)
        )
        if self.gc_trigger_blocks >= blocks_per_die:
            raise SimulationError(
                f"GC pools need {self.gc_trigger_blocks} free blocks but a die has {blocks_per_die}"
            )
        self.budget = LsbBudget(cap_bytes=config.resolve_lsb_cap(geometry.capacity_bytes))

        self.blocks: list[BlockPointer] = []
        self.free_pools: list[list[tuple[int, int]]] = [[] for _ in range(self.n_dies)]
        for die in range(self.n_dies):
            for plane in range(geometry.planes_per_die):
                for block in range(geometry.blocks_per_plane):
                    block_id = len(self.blocks)
                    self.blocks.append(BlockPointer(block_id, die, plane, block, self.pages_per_block))
                    self.free_pools[die].append((0, block_id))
            heapq.heapify(self.free_pools[die])

        # groups[page_type][die]: open blocks keyed by id, ordered by insertion
        self.groups: list[list[dict[int, BlockPointer]]] = [
            [{} for _ in range(self.n_dies)] for _ in PageType
        ]
        self.full_blocks: list[set[int]] = [set() for _ in range(self.n_dies)]
        self.write_points: list[Optional[BlockPointer]] = [None] * self.n_dies

        self.mapping: dict[int, int] = {}
        self.owner: dict[int, int] = {}
        self.live_pages = 0

        self._cursor = 0
        # in-order allocators stay on one die per block
        self._striped_cursor = 0
        self._striped_block: Optional[BlockPointer] = None
        self._bg_prefer_csb = config.background_first == "csb"
        self._collecting = False

        self.programmed_pages = 0
        self.wasted_pages = 0
        self.gc_copies = 0
        self.gc_runs = 0
        self.erases = 0

    def _build_next_lsb(self) -> list[Optional[int]]:
        nxt: list[Optional[int]] = [None] * (self.pages_per_block + 1)
        for page in range(self.pages_per_block - 1, -1, -1):
            nxt[page] = page if self._page_types[page] is PageType.LSB else nxt[page + 1]
        return nxt

    # Addressing helpers

    def block_of(self, ppn: int) -> BlockPointer:
        return self.blocks[ppn // self.pages_per_block]

    def address(self, ppn: int) -> FlashAddress:
        g = self.geometry
        bp = self.block_of(ppn)
        channel = bp.die % g.channels
        rest = bp.die // g.channels
        return FlashAddress(
            channel,
            rest % g.packages_per_channel,
            rest // g.packages_per_channel,
            bp.plane,
            bp.block,
            ppn % self.pages_per_block,
        )

    def open_blocks(self, die: int) -> int:
        return sum(len(group[die]) for group in self.groups)

    def _rotate(self) -> int:
        die = self._cursor
        self._cursor = (self._cursor + 1) % self.n_dies
        return die

    # Translation

    def translate(self, lpn: int) -> Optional[FlashAddress]:
        """Physical address of a mapped LPN, or None on a miss."""
        ppn = self.mapping.get(lpn)
        return None if ppn is None else self.address(ppn)

    # Block lifecycle

    def _regroup(self, bp: BlockPointer, old_type: Optional[PageType]) -> None:
        if old_type is not None:
            del self.groups[old_type][bp.die][bp.block_id]
        if bp.next_free_page < self.pages_per_block:
            self.groups[self._page_types[bp.next_free_page]][bp.die][bp.block_id] = bp
        else:
            self.full_blocks[bp.die].add(bp.block_id)

    def _can_open(self, die: int) -> bool:
        if self._collecting:
            return bool(self.free_pools[die])
        if len(self.free_pools[die]) > self.reserve_blocks:
            return True
        return any(self.blocks[b].invalid_count for b in self.full_blocks[die])

    def wear_level_select_free(self, die: int) -> BlockPointer:
        """
        Pop the free block with the lowest erase count (ties: lowest id).

        Raises:
            SimulationError: If the die has no free block
        """
        pool = self.free_pools[die]
        if not pool:
            raise SimulationError(f"free pool of die {die} is empty")
        _, block_id = heapq.heappop(pool)
        return self.blocks[block_id]

    def _open_block(self, die: int) -> BlockPointer:
        if not self._collecting and len(self.free_pools[die]) < self.gc_trigger_blocks:
            self.garbage_collect(die)
        if not self._collecting and len(self.free_pools[die]) <= self.reserve_blocks:
            raise DeviceFullError(f"die {die} has no reclaimable space")
        bp = self.wear_level_select_free(die)
        n_meta = self.geometry.n_meta
        for page in range(n_meta):
            bp.states[page] = PageState.META
        bp.next_free_page = n_meta
        self._regroup(bp, None)
        return bp

    def _take(self, bp: BlockPointer) -> int:
        page = bp.next_free_page
        if bp.states[page] != PageState.FREE:
            raise SimulationError(f"page {page} of block {bp.block_id} programmed twice")
        old_type = self._page_types[page]
        bp.next_free_page = page + 1
        self._regroup(bp, old_type)
        return bp.block_id * self.pages_per_block + page

    def _skip_to(self, bp: BlockPointer, target: int) -> int:
        """Mark pages before `target` invalid-at-birth; returns the count."""
        start = bp.next_free_page
        count = target - start
        if count <= 0:
            return 0
        old_type = self._page_types[start]
        for page in range(start, target):
            bp.states[page] = PageState.SKIPPED
        bp.invalid_count += count
        bp.next_free_page = target
        self.wasted_pages += count
        self._regroup(bp, old_type)
        return count

    # Allocation policies

    def allocate_latency_aware(self, urgency: Urgency, die: Optional[int] = None) -> int:
        """
        Allocate a page by speed class: foreground takes LSB pages across
        die-indexed LSB lists, background prefers CSB/MSB pages.

        Args:
            urgency: Eviction class of the write
            die: Target die; None rotates across dies

        Returns:
            Physical page number
        """
        if urgency is Urgency.FOREGROUND:
            return self._latency_aware_foreground(self._rotate() if die is None else die)
        return self._latency_aware_background(die)

    def _latency_aware_foreground(self, die: int) -> int:
        lsb_group = self.groups[PageType.LSB][die]
        if lsb_group:
            return self._take(next(iter(lsb_group.values())))
        if self.open_blocks(die) < self.config.max_open_blocks_per_die and self._can_open(die):
            return self._take(self._open_block(die))
        # borrow a ready LSB page elsewhere before wasting siblings here
        for offset in range(1, self.n_dies):
            lsb_group = self.groups[PageType.LSB][(die + offset) % self.n_dies]
            if lsb_group:
                return self._take(next(iter(lsb_group.values())))

        page_size = self.geometry.page_size
        best: Optional[BlockPointer] = None
        best_skip = 0
        for page_type in (PageType.CSB, PageType.MSB):
            for bp in self.groups[page_type][die].values():
                target = self._next_lsb[bp.next_free_page]
                if target is None:
                    continue
                skip = target - bp.next_free_page
                if not self.budget.allows(skip * page_size):
                    continue
                if best is None or (skip, bp.block_id) < (best_skip, best.block_id):
                    best, best_skip = bp, skip
        if best is not None:
            self.budget.charge(best_skip * page_size)
            best.budget_pages += best_skip
            self._skip_to(best, self._next_lsb[best.next_free_page])
            return self._take(best)
        return self._in_order(die)

    def _pages_to_lsb(self, bp: BlockPointer) -> int:
        target = self._next_lsb[bp.next_free_page]
        return self.pages_per_block if target is None else target - bp.next_free_page

    def _in_order(self, die: int) -> int:
        """Next page in program order of any open block on the die."""
        for page_type in (PageType.CSB, PageType.MSB, PageType.LSB):
            group = self.groups[page_type][die]
            if group:
                return self._take(next(iter(group.values())))
        return self._take(self._open_block(die))

    def _latency_aware_background(self, die: Optional[int]) -> int:
        if self.geometry.n_state == 3:
            order = (PageType.CSB, PageType.MSB) if self._bg_prefer_csb else (PageType.MSB, PageType.CSB)
            self._bg_prefer_csb = not self._bg_prefer_csb
        else:
            order = (PageType.MSB,)
        if die is None:
            start = self._rotate()
            dies = [(start + i) % self.n_dies for i in range(self.n_dies)]
        else:
            start = die
            dies = [die]
        for d in dies:
            for page_type in order:
                group = self.groups[page_type][d]
                if group:
                    # the block closest to its next LSB page rejoins the LSB lists first
                    return self._take(min(group.values(), key=self._pages_to_lsb))
        for d in dies:
            group = self.groups[PageType.LSB][d]
            if group:
                return self._take(next(iter(group.values())))
        return self._take(self._open_block(start))

    def allocate_write_point(self, urgency: Urgency, die: Optional[int] = None) -> int:
        """
        Allocate at the die's write point; foreground writes skip CSB/MSB
        pages to the next LSB page, wasting what they skip.

        Args:
            urgency: Eviction class of the write
            die: Target die; None stays on one die until its block fills

        Returns:
            Physical page number
        """
        striped = die is None
        die = self._striped_die() if striped else die
        bp = self._write_point(die)
        if urgency is Urgency.FOREGROUND:
            target = self._next_lsb[bp.next_free_page]
            # finish blocks with no LSB page left; GC copies can leave a fresh one so too
            while target is None:
                self._skip_to(bp, self.pages_per_block)
                if striped:
                    self._striped_block = bp
                    die = self._striped_die()
                bp = self._write_point(die)
                target = self._next_lsb[bp.next_free_page]
            self._skip_to(bp, target)
        return self._take_striped(bp, striped)

    def _write_point(self, die: int) -> BlockPointer:
        bp = self.write_points[die]
        if bp is not None and bp.next_free_page < self.pages_per_block:
            return bp
        if not self._collecting and len(self.free_pools[die]) < self.gc_trigger_blocks:
            self.garbage_collect(die)
            # copies may have opened a fresh write point
            bp = self.write_points[die]
            if bp is not None and bp.next_free_page < self.pages_per_block:
                return bp
        bp = self._open_block(die)
        self.write_points[die] = bp
        return bp

    def _striped_die(self) -> int:
        last = self._striped_block
        if last is not None and last.next_free_page >= self.pages_per_block:
            self._striped_cursor = (self._striped_cursor + 1) % self.n_dies
            self._striped_block = None
        return self._striped_cursor

    def _take_striped(self, bp: BlockPointer, striped: bool) -> int:
        if striped:
            self._striped_block = bp
        return self._take(bp)

    def allocate_sequential(self, die: Optional[int] = None) -> int:
        """Next page in strict in-block order, moving to the next die only when a block fills."""
        striped = die is None
        die = self._striped_die() if striped else die
        return self._take_striped(self._write_point(die), striped)

    def allocate(self, urgency: Urgency, policy: FtlPolicy, die: Optional[int] = None) -> int:
        if policy is FtlPolicy.LATENCY_AWARE:
            return self.allocate_latency_aware(urgency, die)
        if policy is FtlPolicy.WRITE_POINT:
            return self.allocate_write_point(urgency, die)
        return self.allocate_sequential(die)

    # Mapping updates

    def _invalidate(self, ppn: int) -> None:
        bp = self.block_of(ppn)
        bp.states[ppn % self.pages_per_block] = PageState.INVALID
        bp.invalid_count += 1
        bp.live_count -= 1
        self.live_pages -= 1
        del self.owner[ppn]

    def _commit(self, lpn: int, ppn: int) -> None:
        old = self.mapping.get(lpn)
        if old is not None:
            self._invalidate(old)
        bp = self.block_of(ppn)
        bp.states[ppn % self.pages_per_block] = PageState.LIVE
        bp.live_count += 1
        self.live_pages += 1
        self.mapping[lpn] = ppn
        self.owner[ppn] = lpn
        self.programmed_pages += 1

    def program(
        self,
        lpn: int,
        urgency: Urgency = Urgency.BACKGROUND,
        policy: Optional[FtlPolicy] = None,
        die: Optional[int] = None,
        issue_time: Optional[int] = None,
        callback: Optional[Callable[..., Any]] = None,
        *payload,
    ) -> FlashAddress:
        """
        Write one logical page to a freshly allocated physical page.

        Args:
            lpn: Logical page number
            urgency: Eviction class
            policy: Allocation policy; defaults to the FTL's policy
            die: Target die; None lets the policy choose
            issue_time: Transaction issue time; defaults to now
            callback: Called with `payload` when the program completes

        Returns:
            Address the page was written to
        """
        if not 0 <= lpn < self.logical_pages:
            raise SimulationError(f"lpn {lpn} outside logical capacity {self.logical_pages}")
        ppn = self.allocate(urgency, policy or self.policy, die)
        self._commit(lpn, ppn)
        addr = self.address(ppn)
        if self.flash is not None:
            when = self.flash.engine.now() if issue_time is None else issue_time
            self.flash.submit_transaction(addr, OpKind.PROGRAM, when, callback, *payload)
        elif callback is not None:
            callback(*payload)
        return addr

    def read(
        self,
        lpn: int,
        issue_time: int,
        callback: Optional[Callable[..., Any]] = None,
        *payload,
        application: bool = True,
    ) -> Optional[int]:
        """Schedule a flash read of a mapped LPN; None on a mapping miss."""
        addr = self.translate(lpn)
        if addr is None or self.flash is None:
            return None
        return self.flash.submit_transaction(
            addr, OpKind.READ, issue_time, callback, *payload, application=application
        )

    def precondition(self, lpns: range) -> None:
        """Map LPNs sequentially without timing cost, then zero the counters."""
        for lpn in lpns:
            self._commit(lpn, self.allocate_sequential())
        self.reset_counters()
        logger.info(f"Preconditioned {len(lpns)} logical pages")

    def reset_counters(self) -> None:
        self.programmed_pages = 0
        self.wasted_pages = 0
        self.gc_copies = 0
        self.gc_runs = 0
        self.erases = 0

    # Garbage collection

    def select_victim(self, die: int) -> Optional[BlockPointer]:
        """Full block with the most invalid pages (ties: lowest id)."""
        best: Optional[BlockPointer] = None
        for block_id in self.full_blocks[die]:
            bp = self.blocks[block_id]
            if bp.invalid_count == 0:
                continue
            if best is None or (bp.invalid_count, -bp.block_id) > (best.invalid_count, -best.block_id):
                best = bp
        return best

    def garbage_collect(self, die: Optional[int] = None) -> int:
        """
        Reclaim blocks greedily until the die's free pool is above the
        GC trigger or no victim remains.

        Args:
            die: Die to collect on; None collects on every die

        Returns:
            Pages reclaimed
        """
        dies = range(self.n_dies) if die is None else (die,)
        reclaimed = 0
        for d in dies:
            while len(self.free_pools[d]) < self.gc_trigger_blocks:
                victim = self.select_victim(d)
                if victim is None:
                    break
                reclaimed += self.collect_block(victim)
        return reclaimed

    def collect_block(self, victim: BlockPointer) -> int:
        """Copy live pages out of `victim`, erase it and return it to the pool."""
        self.gc_runs += 1
        reclaimed = victim.invalid_count
        now = self.flash.engine.now() if self.flash is not None else 0
        self._collecting = True
        try:
            base = victim.block_id * self.pages_per_block
            for page in range(self.pages_per_block):
                if victim.states[page] != PageState.LIVE:
                    continue
                old_ppn = base + page
                lpn = self.owner[old_ppn]
                read_done = now
                if self.flash is not None:
                    read_done = self.flash.submit_transaction(
                        self.address(old_ppn), OpKind.READ, now
                    )
                new_ppn = self.allocate(Urgency.BACKGROUND, self.policy, victim.die)
                self._commit(lpn, new_ppn)
                self.gc_copies += 1
                if self.flash is not None:
                    # the copy cannot start before its data is read out
                    self.flash.submit_transaction(
                        self.address(new_ppn), OpKind.PROGRAM, read_done
                    )
        finally:
            self._collecting = False
        self._erase(victim, now)
        logger.debug(
            f"GC on die {victim.die}: block {victim.block_id} reclaimed {reclaimed} pages"
        )
        return reclaimed

    def _erase(self, bp: BlockPointer, now: int) -> None:
        if bp.live_count:
            raise SimulationError(f"erasing block {bp.block_id} with live pages")
        self.full_blocks[bp.die].discard(bp.block_id)
        if self.write_points[bp.die] is bp:
            self.write_points[bp.die] = None
        self.budget.refund(bp.budget_pages * self.geometry.page_size)
        bp.budget_pages = 0
        bp.invalid_count = 0
        bp.next_free_page = 0
        bp.states[:] = bytes(self.pages_per_block)
        bp.erase_count += 1
        self.erases += 1
        if self.flash is not None:
            self.flash.submit_transaction(
                self.address(bp.block_id * self.pages_per_block), OpKind.ERASE, now
            )
        heapq.heappush(self.free_pools[bp.die], (bp.erase_count, bp.block_id))

    # Reporting and audits

    def wastage(self) -> WastageReport:
        return WastageReport(self.policy.value, self.programmed_pages, self.wasted_pages)

    def scan_page_states(self) -> dict[PageState, int]:
        """Brute-force count of page states over every block."""
        counts = {state: 0 for state in PageState}
        for bp in self.blocks:
            for state in bp.states:
                counts[PageState(state)] += 1
        return counts

    def derive_groups(self) -> list[list[list[int]]]:
        """Page groups recomputed from block pointers, as sorted id lists."""
        derived: list[list[list[int]]] = [[[] for _ in range(self.n_dies)] for _ in PageType]
        free = {block_id for pool in self.free_pools for _, block_id in pool}
        for bp in self.blocks:
            if bp.block_id in free or bp.next_free_page >= self.pages_per_block:
                continue
            derived[self._page_types[bp.next_free_page]][bp.die].append(bp.block_id)
        return derived

    def check_invariants(self) -> None:
        """
        Raises:
            SimulationError: If mapping, page groups or the LSB budget are inconsistent
        """
        if self.live_pages != len(self.mapping):
            raise SimulationError(
                f"{self.live_pages} live pages but {len(self.mapping)} mapped LPNs"
            )
        for lpn, ppn in self.mapping.items():
            bp = self.block_of(ppn)
            if bp.states[ppn % self.pages_per_block] != PageState.LIVE or self.owner.get(ppn) != lpn:
                raise SimulationError(f"lpn {lpn} maps to a page that is not live")
        incremental = [
            [sorted(group[die]) for die in range(self.n_dies)] for group in self.groups
        ]
        if incremental != self.derive_groups():
            raise SimulationError("page groups diverged from block pointers")
        if not 0 <= self.budget.consumed_bytes <= self.budget.cap_bytes:
            raise SimulationError(
                f"LSB budget {self.budget.consumed_bytes} outside [0, {self.budget.cap_bytes}]"
            )
