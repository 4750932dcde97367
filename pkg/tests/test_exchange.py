from dataclasses import replace

import numpy as np
import pytest

from minidpsnn.exchange import engine
from minidpsnn.exchange.engine import NodeMap, broker_route, run_workers
from minidpsnn.exchange.transport import LoopbackTransport
from minidpsnn.harness import RunConfig, run_simulation
from minidpsnn.harness.runner import inter_node_streams
from minidpsnn.topology import GridConfig

SMALL_RUN = RunConfig(
    grid=GridConfig(grid_x=2, grid_y=2, neurons_per_column=400, out_degree_exc=300, out_degree_inh=250),
    sim_seconds=0.3,
    seed=21,
)


def _all_pairs(n_ranks):
    return {s: {d: np.array([s * 10, s * 10 + 1]) for d in range(n_ranks) if d != s} for s in range(n_ranks)}


def test_broker_route_two_nodes_four_ranks():
    nm = NodeMap.contiguous(8, 4)
    plan = broker_route(nm, _all_pairs(8))
    assert len(plan.direct) == 2 * 4 * 3
    assert all(nm.node_of_rank[s] == nm.node_of_rank[d] for s, d in plan.direct)
    assert sorted(plan.inter_node) == [(0, 1), (1, 0)]
    assert plan.inter_node[(0, 1)].tolist() == [0, 1, 10, 11, 20, 21, 30, 31]
    assert sorted(plan.scatter) == [(0, r) for r in range(4)] + [(1, r) for r in range(4, 8)]
    assert plan.scatter[(1, 5)].tolist() == [0, 1, 10, 11, 20, 21, 30, 31]
    # flat would use 32 directed inter-node streams, 16 each way
    flat = sum(1 for s in range(8) for d in range(8) if nm.node_of_rank[s] != nm.node_of_rank[d])
    assert flat == 32 and len(plan.inter_node) == 2


def test_broker_route_single_node_is_flat():
    nm = NodeMap.contiguous(4, None)
    plan = broker_route(nm, _all_pairs(4))
    assert plan.inter_node == {} and plan.scatter == {} and len(plan.direct) == 12


def test_node_map_validation():
    with pytest.raises(engine.ExchangeError):
        NodeMap(np.array([0, 0, 2, 2])).validate()
    with pytest.raises(engine.ExchangeError):
        NodeMap.contiguous(4, 0)
    nm = NodeMap.contiguous(6, 4)
    assert nm.n_nodes == 2 and nm.ranks_on(1) == [4, 5] and nm.broker(1) == 7 and nm.node_of_endpoint(7) == 1


def test_single_rank_has_no_traffic(plan_cache):
    res = run_simulation(SMALL_RUN, plan_cache)
    assert res.packet_log.shape[0] == 0
    assert res.report.spike_count > 0


@pytest.fixture(scope="module")
def reference(plan_cache):
    return run_simulation(SMALL_RUN, plan_cache)


@pytest.mark.parametrize(
    "n_ranks,mode,send,rpn,backend",
    [
        (2, "flat", "collective", None, "loopback"),
        (4, "flat", "p2p", None, "loopback"),
        (4, "broker", "collective", 2, "loopback"),
        (8, "broker", "p2p", 4, "loopback"),
        (3, "broker", "collective", 1, "loopback"),
        (4, "broker", "p2p", 2, "socket"),
        (5, "flat", "collective", None, "socket"),
    ],
)
def test_raster_and_events_invariant(reference, plan_cache, n_ranks, mode, send, rpn, backend):
    cfg = replace(SMALL_RUN, n_ranks=n_ranks, route_mode=mode, send_mode=send, ranks_per_node=rpn, backend=backend)
    res = run_simulation(cfg, plan_cache)
    assert res.canonical_raster() == reference.canonical_raster()
    assert res.report.raster_hash == reference.report.raster_hash
    assert res.report.internal_events == reference.report.internal_events
    assert res.report.external_events == reference.report.external_events
    sent = sum(e.spikes_sent for e in res.endpoints)
    received = sum(e.spikes_received for e in res.endpoints)
    assert sent == received
    log = res.packet_log
    if send == "p2p":
        assert np.all(log[:, 3] > 8)
    else:
        rt = res.plan.routing
        n_dest = sum(len(rt.subscribed(r)) for r in range(n_ranks)) if mode == "flat" else 0
        assert log.shape[0] >= n_dest * cfg.n_steps


def test_collective_flat_packet_count(plan_cache):
    cfg = replace(SMALL_RUN, n_ranks=4, sim_seconds=0.05)
    res = run_simulation(cfg, plan_cache)
    rt = res.plan.routing
    log = res.packet_log
    for s in range(4):
        for d in rt.subscribed(s):
            pairs = log[(log[:, 1] == s) & (log[:, 2] == d)]
            assert np.array_equal(np.unique(pairs[:, 0]), np.arange(cfg.n_steps))


def test_inter_node_streams_counting():
    nm = NodeMap.contiguous(4, 2)
    log = np.array([
        [0, 0, 2, 8], [0, 0, 2, 40], [0, 1, 3, 8], [0, 0, 1, 16],
        [1, 4, 5, 48], [1, 2, 0, 8],
    ])
    assert inter_node_streams(log, nm).tolist() == [2, 2]


def test_worker_failure_propagates():
    class Boom:
        ep = 0

        def __init__(self):
            from minidpsnn.instrumentation import PhaseTimer

            self.timer = PhaseTimer()

        def step(self, t):
            raise ZeroDivisionError("boom")

    class Waiter(Boom):
        ep = 1

        def step(self, t):
            tr.sync(1)

    tr = LoopbackTransport(2, timeout=10)
    with pytest.raises(ZeroDivisionError):
        run_workers([Boom(), Waiter()], 3, tr)
