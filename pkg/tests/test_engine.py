"""Tests for the event loop and RNG streams."""
import pytest

from app.errors import SimulationError
from app.services.engine import Engine, EventKind

STREAMS = ("ungzip-arrival", "ungzip-size")


def test_events_dispatch_in_time_order(engine: Engine):
    """Events fire by time regardless of scheduling order."""
    fired = []
    engine.at(100, EventKind.TIMER, fired.append, 100)
    engine.at(50, EventKind.TIMER, fired.append, 50)
    engine.run_until(1_000)
    assert fired == [50, 100]


def test_equal_time_events_follow_seq(engine: Engine):
    """Ties are broken by scheduling order."""
    fired = []
    first = engine.at(70, EventKind.TIMER, fired.append, "a")
    second = engine.at(70, EventKind.TIMER, fired.append, "b")
    assert second.seq == first.seq + 1
    engine.run_until(70)
    assert fired == ["a", "b"]


def test_schedule_in_past_raises(engine: Engine):
    """Scheduling before now is a logic error."""
    engine.run_until(10)
    with pytest.raises(SimulationError):
        engine.at(5, EventKind.TIMER, lambda: None)


def test_run_until_empty_queue_advances_time(engine: Engine):
    """An empty run still moves now() to the limit."""
    assert engine.run_until(30_000_000_000) == 0
    assert engine.now() == 30_000_000_000


def test_run_until_stops_at_limit(engine: Engine):
    """Only events at or before the limit are dispatched."""
    for t in (1, 2, 3):
        engine.at(t, EventKind.TIMER, lambda: None)
    assert engine.run_until(2) == 2
    assert engine.pending() == 1
    assert engine.run_until(3) == 1


def test_cancelled_events_are_skipped(engine: Engine):
    """Tombstoned events never fire."""
    fired = []
    event = engine.at(5, EventKind.TIMER, fired.append, 1)
    event.cancel()
    assert engine.run_until(10) == 0
    assert fired == []


def test_callbacks_see_their_fire_time(engine: Engine):
    """now() equals fire_at during dispatch, and nested scheduling works."""
    seen = []

    def tick():
        seen.append(engine.now())
        if len(seen) < 3:
            engine.after(10, EventKind.TIMER, tick)

    engine.at(5, EventKind.TIMER, tick)
    engine.run_until(100)
    assert seen == [5, 15, 25]


def test_same_seed_same_stream_sequence():
    """A stream replays identically for the same seed."""
    a, b = Engine(seed=3, streams=STREAMS), Engine(seed=3, streams=STREAMS)
    assert [a.rng_next("ungzip-size") for _ in range(50)] == [
        b.rng_next("ungzip-size") for _ in range(50)
    ]


def test_streams_are_independent_of_interleaving():
    """Drawing from B between A's draws does not change A's values."""
    interleaved, sequential = Engine(seed=9, streams=STREAMS), Engine(seed=9, streams=STREAMS)
    mixed_a, mixed_b = [], []
    for _ in range(20):
        mixed_a.append(interleaved.rng_next("ungzip-arrival"))
        mixed_b.append(interleaved.rng_next("ungzip-size"))
    only_a = [sequential.rng_next("ungzip-arrival") for _ in range(20)]
    only_b = [sequential.rng_next("ungzip-size") for _ in range(20)]
    assert mixed_a == only_a
    assert mixed_b == only_b


def test_different_seeds_differ():
    """The first 1000 draws differ somewhere across seeds."""
    a, b = Engine(seed=1, streams=STREAMS), Engine(seed=2, streams=STREAMS)
    assert [a.rng_next("ungzip-size") for _ in range(1000)] != [
        b.rng_next("ungzip-size") for _ in range(1000)
    ]


def test_unknown_stream_raises(engine: Engine):
    """Only registered streams can be drawn from."""
    with pytest.raises(SimulationError):
        engine.rng_next("nope")


def test_constructor_registers_named_streams():
    engine = Engine(seed=1, streams=STREAMS)
    for name in STREAMS:
        assert engine.rng(name) is not None


def test_no_streams_registered_by_default(engine: Engine):
    with pytest.raises(SimulationError):
        engine.rng_next("ungzip-arrival")
