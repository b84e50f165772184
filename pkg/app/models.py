"""Records that flow between the simulated layers."""
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional


class PageType(IntEnum):
    """Program/read speed class of a flash page within a TLC wordline."""

    LSB = 0
    CSB = 1
    MSB = 2


class OpKind(str, Enum):
    """Flash transaction kind."""

    READ = "read"
    PROGRAM = "program"
    ERASE = "erase"


class RequestKind(str, Enum):
    """Direction of a host I/O request."""

    READ = "read"
    WRITE = "write"


class Urgency(str, Enum):
    """Eviction class a program is issued under."""

    FOREGROUND = "foreground"
    BACKGROUND = "background"


class BufferStatus(IntEnum):
    """Device buffer state reported in the completion upcall."""

    OK = 0
    FULL = 1


class PageState(IntEnum):
    """Lifecycle state of one physical flash page."""

    FREE = 0
    LIVE = 1
    INVALID = 2
    SKIPPED = 3
    META = 4


@dataclass(frozen=True, slots=True)
class FlashAddress:
    """Location of one physical flash page."""

    channel: int
    package: int
    die: int
    plane: int
    block: int
    page: int


@dataclass(slots=True)
class IoRequest:
    """One host I/O as issued by a workload.

    `lba` and `length` are in host pages; timestamps are simulated ns.
    """

    request_id: int
    workload: str
    kind: RequestKind
    lba: int
    length: int
    submit_time: int
    urgency: Urgency = Urgency.BACKGROUND
    fsync: bool = False
    complete_time: Optional[int] = None

    @property
    def latency(self) -> int:
        if self.complete_time is None:
            raise ValueError(f"request {self.request_id} has not completed")
        return self.complete_time - self.submit_time

    def __repr__(self) -> str:
        return (
            f"<IoRequest(id={self.request_id}, workload={self.workload}, "
            f"kind={self.kind.value}, lba={self.lba}, length={self.length})>"
        )


@dataclass(slots=True)
class VictimHint:
    """Page-victimization downcall carried on an NVMe command."""

    is_victimization: bool = False
    dirty_page_count: int = 0


@dataclass(slots=True)
class TaggedCommand:
    """NVMe submission entry with the victimization hint piggybacked."""

    command_id: int
    opcode: RequestKind
    lba: int
    length_pages: int
    victim_hint: VictimHint = field(default_factory=VictimHint)


@dataclass(frozen=True, slots=True)
class TaggedCompletion:
    """NVMe completion entry; `sq_head_field` carries the buffer-status upcall."""

    command_id: int
    success: bool
    sq_head_field: int


@dataclass(frozen=True, slots=True)
class LatencySample:
    """Latency of one completed request."""

    workload: str
    kind: RequestKind
    submit_time: int
    complete_time: int

    @property
    def latency(self) -> int:
        return self.complete_time - self.submit_time


@dataclass(frozen=True, slots=True)
class WastageReport:
    """Programmed versus skipped flash pages for one FTL policy."""

    policy: str
    used_pages: int
    wasted_pages: int

    @property
    def utilization(self) -> float:
        total = self.used_pages + self.wasted_pages
        if total == 0:
            return 1.0
        return self.used_pages / total
