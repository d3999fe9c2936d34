import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfq.errors import ConfigurationError
from lfq.qdisc import (CODEL_INTERVAL, CODEL_TARGET, LFQ_INITIAL_CAP, EnqueueResult, QdiscKind,
                       QueueState, codel_control_law, round_cap)
from lfq.transport import Packet


def fifo(cap: int) -> QueueState:
    return QueueState.create(QdiscKind(QdiscKind.FIFO, cap))


def codel() -> QueueState:
    return QueueState.create(QdiscKind(QdiscKind.FQ_CODEL))


def fill(queue: QueueState, count: int, now: int = 0, first_seq: int = 1) -> None:
    for seq in range(first_seq, first_seq + count):
        queue.enqueue(Packet(seq=seq, sent_at=now), now)


@pytest.mark.parametrize("flag, name, cap", [
    ("lfq", QdiscKind.LFQ, None),
    ("fifo:100", QdiscKind.FIFO, 100),
    ("FIFO:1000", QdiscKind.FIFO, 1000),
    ("fq-codel", QdiscKind.FQ_CODEL, None),
])
def test_from_flag(flag, name, cap):
    kind = QdiscKind.from_flag(flag)
    assert kind.name == name
    assert kind.cap == cap


@pytest.mark.parametrize("flag", ["fifo", "fifo:x", "fifo:0", "fifo100", "red", "codel", "fqcodel"])
def test_from_flag_rejects_bad_values(flag):
    with pytest.raises(ConfigurationError):
        QdiscKind.from_flag(flag)


def test_learned_queue_starts_at_initial_cap():
    queue = QueueState.create(QdiscKind(QdiscKind.LFQ))
    assert queue.cap == LFQ_INITIAL_CAP


def test_tail_drop_at_cap():
    queue = fifo(100)
    fill(queue, 99)
    assert queue.enqueue(Packet(seq=100, sent_at=0), 5) == EnqueueResult.ACCEPTED
    assert queue.enqueue(Packet(seq=101, sent_at=0), 7) == EnqueueResult.DROPPED
    assert len(queue) == 100
    assert queue.drops == 1
    assert queue.last_drop_time == 7


def test_cap_reduction_never_evicts():
    queue = fifo(50)
    fill(queue, 30)
    queue.set_cap(10)
    assert len(queue) == 30
    assert queue.enqueue(Packet(seq=31, sent_at=0), 1) == EnqueueResult.DROPPED


def test_set_cap_admits_exactly_cap_packets():
    queue = QueueState.create(QdiscKind(QdiscKind.LFQ))
    queue.set_cap(35)
    results = [queue.enqueue(Packet(seq=i, sent_at=0), 0) for i in range(1, 37)]
    assert results[:35] == [EnqueueResult.ACCEPTED] * 35
    assert results[35] == EnqueueResult.DROPPED


def test_set_cap_rejects_zero():
    with pytest.raises(ValueError):
        fifo(10).set_cap(0)


def test_fifo_order_preserved():
    queue = fifo(10)
    fill(queue, 5)
    assert [queue.dequeue(0)[0].seq for _ in range(5)] == [1, 2, 3, 4, 5]
    assert queue.dequeue(0) == (None, [])


@pytest.mark.parametrize("output, cap", [(-3.0, 1), (0.2, 1), (1.49, 1), (1.5, 2), (34.6, 35)])
def test_round_cap(output, cap):
    assert round_cap(output) == cap


def test_codel_no_drops_below_target():
    queue = codel()
    fill(queue, 20)
    for i in range(20):
        packet, dropped = queue.dequeue(i * 200)
        assert dropped == []
    assert queue.drops == 0


def test_codel_tolerates_99ms_above_target():
    queue = codel()
    fill(queue, 3, now=0)
    fill(queue, 7, now=105_000, first_seq=4)
    for now in (10_000, 50_000, 109_000):
        _, dropped = queue.dequeue(now)
        assert dropped == []
    # the next head has waited only 4.5 ms
    _, dropped = queue.dequeue(109_500)
    assert dropped == []
    assert queue.drops == 0
    assert queue.codel.first_above_time == 0


def test_codel_drops_after_a_full_interval_above_target():
    queue = codel()
    fill(queue, 10, now=0)
    _, dropped = queue.dequeue(10_000)
    assert dropped == []
    assert queue.codel.first_above_time == 10_000 + CODEL_INTERVAL

    packet, dropped = queue.dequeue(10_000 + CODEL_INTERVAL)
    assert [p.seq for p in dropped] == [2]
    assert packet.seq == 3
    assert queue.codel.dropping
    assert queue.codel_drops == queue.drops == 1
    assert queue.codel.drop_next == codel_control_law(10_000 + CODEL_INTERVAL, 1)


def test_codel_control_law_shrinks_with_count():
    assert codel_control_law(0, 1) == CODEL_INTERVAL
    assert codel_control_law(0, 4) == CODEL_INTERVAL // 2
    assert codel_control_law(1000, 0) == 1000 + CODEL_INTERVAL


def test_codel_keeps_one_packet_even_when_late():
    queue = codel()
    fill(queue, 1)
    packet, dropped = queue.dequeue(10 * CODEL_INTERVAL)
    assert packet.seq == 1
    assert dropped == []


def test_codel_sub_target_sojourn_behaves_like_unbounded_fifo():
    queue, reference = codel(), fifo(10_000)
    for q in (queue, reference):
        fill(q, 200)
    for i in range(200):
        a, _ = queue.dequeue(i)
        b, _ = reference.dequeue(i)
        assert a.seq == b.seq
    assert CODEL_TARGET > 200


@given(cap=st.integers(min_value=1, max_value=50),
       ops=st.lists(st.tuples(st.booleans(), st.integers(min_value=1, max_value=60)), max_size=200))
def test_length_never_exceeds_cap_at_enqueue(cap, ops):
    queue = fifo(cap)
    seq = 0
    for is_enqueue, new_cap in ops:
        if is_enqueue:
            seq += 1
            result = queue.enqueue(Packet(seq=seq, sent_at=seq), seq)
            if result == EnqueueResult.ACCEPTED:
                assert len(queue) <= queue.cap
        else:
            queue.set_cap(new_cap)
            queue.dequeue(seq)
    assert queue.drops == queue.enqueue_drops
