import numpy as np
import pytest

import oracles
from minidpsnn.exchange.queues import AxonalSpike, DelayError, DelayQueues, SynapticRing, enqueue_axonal, expand_spikes


def test_readable_only_at_due_step():
    q = enqueue_axonal(DelayQueues(), AxonalSpike(3, 42), 2)
    for t in range(0, 5):
        assert q.drain(t) == []
    assert q.drain(5) == [AxonalSpike(3, 42)]
    assert q.pending() == 0
    assert q.drain(5 + 16) == []


def test_same_bucket_ordered_by_source():
    q = DelayQueues()
    q.enqueue(AxonalSpike(1, 9), 4)
    q.enqueue(AxonalSpike(1, 2), 4)
    q.enqueue(AxonalSpike(3, 1), 2)
    assert q.drain(5) == [AxonalSpike(1, 2), AxonalSpike(1, 9), AxonalSpike(3, 1)]


@pytest.mark.parametrize("delay", [0, 17, -1])
def test_delay_out_of_horizon(delay):
    with pytest.raises(DelayError):
        DelayQueues().enqueue(AxonalSpike(0, 0), delay)


def test_random_schedule_matches_naive_map():
    gen = np.random.default_rng(11)
    q, ref = DelayQueues(), oracles.NaiveDelayMap()
    steps = 200
    for t in range(steps):
        for src in gen.integers(0, 500, size=5):
            d = int(gen.integers(1, 17))
            q.enqueue(AxonalSpike(t, int(src)), d)
            ref.add(t, int(src), d)
        got = [(s.step, s.source) for s in q.drain(t)]
        assert got == ref.take(t)
    assert q.pending() == sum(len(v) for v in ref.due.values())


def test_ring_delivers_at_exact_delay():
    # source 0 -> local targets 1 (delay 3) and 2 (delay 15); source 1 -> target 0 (delay 1)
    indptr = np.array([0, 2, 3], dtype=np.int64)
    tgt = np.array([1, 2, 0], dtype=np.int32)
    dly = np.array([3, 15, 1], dtype=np.uint8)
    wq = np.array([7, -2], dtype=np.int64)
    ring = SynapticRing(3)
    n = expand_spikes(np.array([0, 1, 0]), 10, indptr, tgt, dly, wq, ring.buf)
    assert n == 5
    out = np.zeros(3, dtype=np.int64)
    seen = {}
    for t in range(10, 30):
        ring.drain(t, out)
        for i in np.flatnonzero(out):
            seen[(t, int(i))] = int(out[i])
    assert seen == {(11, 0): -2, (13, 1): 14, (25, 2): 14}
    assert not ring.buf.any()
