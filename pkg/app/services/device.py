"""SSD controller: fetches NVMe commands and serves them from the buffer and flash."""
import logging
import math
from collections import deque
from typing import Optional

from app.models import BufferStatus, RequestKind, TaggedCommand
from app.services.buffer import InternalBuffer, SlotOrigin
from app.services.engine import Engine, EventKind
from app.services.ftl import Ftl
from app.services.nvme import QueuePair

logger = logging.getLogger(__name__)


class SsdController:
    """
    Host interface layer of the simulated SSD.

    Commands address device pages; victimization hints count host pages
    and are converted here. With in-order admission, fetched commands are
    taken one at a time and a write that stalls on a full buffer holds
    back every later command, reads included, until its last page is
    buffered.

    Args:
        engine: Event loop
        queue: Queue pair the controller serves
        buffer: Internal write buffer
        ftl: FTL used for read translation
        host_pages_per_device_page: Host pages per device page
        decode_hints: Forward victimization hints to the buffer
        report_status: Embed the buffer status in completions
        dram_ns_per_page: Latency of serving one page from DRAM
        in_order: Block the command stream behind stalled writes
    """

    def __init__(
        self,
        engine: Engine,
        queue: QueuePair,
        buffer: InternalBuffer,
        ftl: Ftl,
        host_pages_per_device_page: int = 2,
        decode_hints: bool = True,
        report_status: bool = True,
        dram_ns_per_page: int = 5_000,
        in_order: bool = True,
    ):
        self.engine = engine
        self.queue = queue
        self.buffer = buffer
        self.ftl = ftl
        self.ratio = host_pages_per_device_page
        self.decode_hints = decode_hints
        self.report_status = report_status
        self.dram_ns_per_page = dram_ns_per_page
        self.in_order = in_order
        self._remaining: dict[int, int] = {}
        self._fetched: deque[TaggedCommand] = deque()
        self._blocking: Optional[int] = None
        self._unbuffered = 0
        self._blocked_since = 0
        self.queue.on_fetch = self.handle_command
        self.hints_received = 0
        self.buffer_read_hits = 0
        self.flash_reads = 0
        self.blocked_ns = 0

    @property
    def blocked(self) -> bool:
        return self._blocking is not None

    def handle_command(self, cmd: TaggedCommand) -> None:
        """Accept a fetched command; it starts once every earlier command has."""
        self._fetched.append(cmd)
        self._drain_fetched()

    def _drain_fetched(self) -> None:
        while self._fetched and self._blocking is None:
            cmd = self._fetched.popleft()
            self._remaining[cmd.command_id] = cmd.length_pages
            if cmd.opcode is RequestKind.WRITE:
                self._handle_write(cmd)
            else:
                self._handle_read(cmd)

    def _handle_write(self, cmd: TaggedCommand) -> None:
        hint = cmd.victim_hint
        origin = SlotOrigin.VICTIMIZATION if hint.is_victimization else SlotOrigin.REGULAR
        if self.decode_hints and hint.is_victimization:
            self.hints_received += 1
            device_pages = math.ceil(hint.dirty_page_count / self.ratio)
            mode = self.buffer.on_victimization_notice(device_pages)
            logger.debug(f"Hint for {device_pages} pages: {mode.value} eviction")
        stalled = 0
        for lpn in range(cmd.lba, cmd.lba + cmd.length_pages):
            if not self.buffer.admit(lpn, origin, self._page_buffered, cmd.command_id):
                stalled += 1
        if stalled and self.in_order:
            # buffered callbacks always fire later, so none has run yet
            self._blocking = cmd.command_id
            self._unbuffered = cmd.length_pages
            self._blocked_since = self.engine.now()

    def _page_buffered(self, command_id: int) -> None:
        if command_id == self._blocking:
            self._unbuffered -= 1
            if not self._unbuffered:
                self.blocked_ns += self.engine.now() - self._blocked_since
                self._blocking = None
                self._page_done(command_id)
                self._drain_fetched()
                return
        self._page_done(command_id)

    def _handle_read(self, cmd: TaggedCommand) -> None:
        now = self.engine.now()
        for lpn in range(cmd.lba, cmd.lba + cmd.length_pages):
            if self.buffer.contains(lpn):
                self.buffer_read_hits += 1
                self.engine.after(
                    self.dram_ns_per_page, EventKind.TIMER, self._page_done, cmd.command_id
                )
            elif self.ftl.read(lpn, now, self._page_done, cmd.command_id) is not None:
                self.flash_reads += 1
            else:
                self._page_done(cmd.command_id)

    def _page_done(self, command_id: int) -> None:
        self._remaining[command_id] -= 1
        if self._remaining[command_id]:
            return
        del self._remaining[command_id]
        status = self.buffer.status() if self.report_status else BufferStatus.OK
        self.queue.complete(command_id, status)
