"""NVMe queue pair with the victimization downcall and buffer-status upcall."""
import logging
from typing import Any, Callable, Optional

from app.errors import ConfigError, QueueFullError, SimulationError
from app.models import BufferStatus, TaggedCommand, TaggedCompletion
from app.schemas import MAX_QUEUE_DEPTH, NvmeConfig
from app.services.engine import Engine, EventKind

logger = logging.getLogger(__name__)

HEAD_BITS = 14
HEAD_MASK = (1 << HEAD_BITS) - 1
COMMAND_ID_SPACE = 1 << 16


def encode_sq_head(head: int, status: BufferStatus) -> int:
    """
    Pack the SQ head and buffer status into the 16-bit sq_head field.

    Status occupies the two most significant bits, the head the low 14.

    Raises:
        ConfigError: If the head does not fit in 14 bits
    """
    if not 0 <= head < MAX_QUEUE_DEPTH:
        raise ConfigError("nvme.queue_depth", f"sq head {head} does not fit in {HEAD_BITS} bits")
    return (int(status) << HEAD_BITS) | head


def decode_sq_head(raw: int) -> tuple[int, BufferStatus]:
    """Inverse of `encode_sq_head`."""
    if not 0 <= raw < 1 << 16:
        raise SimulationError(f"sq_head field {raw:#x} wider than 16 bits")
    return raw & HEAD_MASK, BufferStatus(raw >> HEAD_BITS)


class Ring:
    """Fixed-size circular queue; one slot stays empty to tell full from empty."""

    def __init__(self, depth: int):
        self.depth = depth
        self.entries: list[Optional[Any]] = [None] * depth
        self.head = 0
        self.tail = 0

    def __len__(self) -> int:
        return (self.tail - self.head) % self.depth

    def is_full(self) -> bool:
        return len(self) == self.depth - 1

    def push(self, entry: Any) -> None:
        if self.is_full():
            raise QueueFullError(f"ring of depth {self.depth} is full")
        self.entries[self.tail] = entry
        self.tail = (self.tail + 1) % self.depth

    def pop(self) -> Any:
        if not len(self):
            raise SimulationError("pop from an empty ring")
        entry = self.entries[self.head]
        self.entries[self.head] = None
        self.head = (self.head + 1) % self.depth
        return entry


class QueuePair:
    """
    One submission/completion queue pair between the host driver and the
    SSD controller.

    Args:
        config: NVMe section of the scenario config
        engine: Event loop
        on_fetch: Controller hook, called with each fetched command
        on_interrupt: Driver hook, called with each completion entry
    """

    def __init__(
        self,
        config: NvmeConfig,
        engine: Engine,
        on_fetch: Optional[Callable[[TaggedCommand], Any]] = None,
        on_interrupt: Optional[Callable[[TaggedCompletion], Any]] = None,
    ):
        if config.queue_depth > MAX_QUEUE_DEPTH:
            raise ConfigError(
                "nvme.queue_depth", f"{config.queue_depth} exceeds {MAX_QUEUE_DEPTH}"
            )
        self.config = config
        self.engine = engine
        self.depth = config.queue_depth
        self.sq = Ring(self.depth)
        self.cq = Ring(self.depth)
        self.on_fetch = on_fetch
        self.on_interrupt = on_interrupt
        self.in_flight: dict[int, TaggedCommand] = {}
        self._next_id = 0
        self.submitted = 0
        self.completed = 0
        self.full_rejections = 0

    def can_submit(self) -> bool:
        return not self.sq.is_full() and len(self.in_flight) < self.depth - 1

    def allocate_command_id(self) -> int:
        """Next 16-bit command id not currently in flight."""
        for _ in range(COMMAND_ID_SPACE):
            cid = self._next_id
            self._next_id = (self._next_id + 1) % COMMAND_ID_SPACE
            if cid not in self.in_flight:
                return cid
        raise QueueFullError("all command ids are in flight")

    def submit(self, cmd: TaggedCommand) -> None:
        """
        Place a command at the SQ tail.

        Raises:
            QueueFullError: If the SQ has no free entry
            SimulationError: If the command id is already in flight
        """
        hint = cmd.victim_hint
        if hint.dirty_page_count > 0 and not hint.is_victimization:
            raise SimulationError(f"command {cmd.command_id} carries a count without the flag")
        if cmd.command_id in self.in_flight:
            raise SimulationError(f"command id {cmd.command_id} already in flight")
        if not self.can_submit():
            self.full_rejections += 1
            raise QueueFullError(f"submission queue full at depth {self.depth}")
        self.sq.push(cmd)
        self.in_flight[cmd.command_id] = cmd
        self.submitted += 1

    def ring_sq_doorbell(self) -> None:
        """Tell the controller new entries exist; it fetches them after the link latency."""
        self.engine.after(self.config.submit_latency_ns, EventKind.TIMER, self._fetch)

    def _fetch(self) -> None:
        while len(self.sq):
            cmd = self.sq.pop()
            if self.on_fetch is not None:
                self.on_fetch(cmd)

    def complete(self, command_id: int, buffer_status: BufferStatus) -> TaggedCompletion:
        """
        Post a completion carrying the buffer status and raise the interrupt.

        Raises:
            SimulationError: If the command id is not in flight
        """
        if command_id not in self.in_flight:
            raise SimulationError(f"completion for unknown command id {command_id}")
        del self.in_flight[command_id]
        completion = TaggedCompletion(
            command_id, True, encode_sq_head(self.sq.head, buffer_status)
        )
        self.cq.push(completion)
        self.completed += 1
        self.engine.after(self.config.completion_latency_ns, EventKind.TIMER, self._interrupt)
        return completion

    def _interrupt(self) -> None:
        completion = self.cq.pop()
        if self.on_interrupt is not None:
            self.on_interrupt(completion)

    def check_invariants(self) -> None:
        """
        Raises:
            SimulationError: If submitted != completed + in flight
        """
        if self.submitted != self.completed + len(self.in_flight):
            raise SimulationError(
                f"NVMe conservation broken: submitted {self.submitted}, "
                f"completed {self.completed}, in flight {len(self.in_flight)}"
            )
