"""Tests for the SSD controller's command handling."""
import pytest

from app.models import RequestKind, TaggedCommand, VictimHint
from app.schemas import NvmeConfig
from app.services.device import SsdController
from app.services.engine import NS_PER_MS, NS_PER_US, Engine
from app.services.ftl import Ftl
from app.services.nvme import QueuePair


def _stack(make_buffer, engine: Engine, ftl: Ftl, **kwargs):
    """Controller over a 4-page buffer; returns it with completion times by command id."""
    queue = QueuePair(NvmeConfig(queue_depth=64), engine)
    device = SsdController(engine, queue, make_buffer(capacity_pages=4), ftl, **kwargs)
    done: dict[int, int] = {}
    queue.on_interrupt = lambda completion: done.setdefault(completion.command_id, engine.now())
    return queue, device, done


def _submit(queue: QueuePair, *commands: tuple) -> None:
    for cid, kind, lba, length in commands:
        queue.submit(TaggedCommand(cid, kind, lba, length, VictimHint()))
    queue.ring_sq_doorbell()


COMMANDS = (
    (0, RequestKind.WRITE, 0, 4),
    (1, RequestKind.WRITE, 10, 2),
    (2, RequestKind.READ, 50, 1),
)


def test_stalled_write_holds_back_later_read(make_buffer, engine: Engine, ftl: Ftl):
    queue, device, done = _stack(make_buffer, engine, ftl)
    _submit(queue, *COMMANDS)
    engine.run_until(100 * NS_PER_US)
    assert 0 in done
    assert 1 not in done and 2 not in done
    assert device.blocked
    engine.run_until(2 * NS_PER_MS)
    assert not device.blocked
    # the read waited for a program to free buffer space
    assert done[2] >= done[1] > 500 * NS_PER_US
    assert device.blocked_ns > 0
    queue.check_invariants()


def test_out_of_order_controller_serves_read_past_stalled_write(
    make_buffer, engine: Engine, ftl: Ftl
):
    queue, device, done = _stack(make_buffer, engine, ftl, in_order=False)
    _submit(queue, *COMMANDS)
    engine.run_until(100 * NS_PER_US)
    assert 2 in done
    assert 1 not in done
    assert not device.blocked
    engine.run_until(2 * NS_PER_MS)
    assert 1 in done
    assert device.blocked_ns == 0


def test_unstalled_writes_do_not_block(make_buffer, engine: Engine, ftl: Ftl):
    queue, device, done = _stack(make_buffer, engine, ftl)
    _submit(queue, (0, RequestKind.WRITE, 0, 2), (1, RequestKind.READ, 0, 1))
    engine.run_until(50 * NS_PER_US)
    assert set(done) == {0, 1}
    assert device.buffer_read_hits == 1
    assert device.blocked_ns == 0


@pytest.mark.parametrize("decode,expected", [(True, 1), (False, 0)])
def test_hints_counted_only_when_decoded(make_buffer, engine: Engine, ftl: Ftl, decode, expected):
    queue, device, _ = _stack(make_buffer, engine, ftl, decode_hints=decode)
    queue.submit(TaggedCommand(0, RequestKind.WRITE, 0, 2, VictimHint(True, 4)))
    queue.ring_sq_doorbell()
    engine.run_until(50 * NS_PER_US)
    assert device.hints_received == expected
