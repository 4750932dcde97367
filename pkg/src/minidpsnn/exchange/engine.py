"""Per-rank simulation loop and spike exchange (flat or broker routed)."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .. import dynamics, rng
from ..instrumentation import PhaseTimer, PhaseTimes
from ..topology import DELAY_HORIZON, PartitionMap, RoutingTable, Topology
from .codec import pack_packets, unpack_packet
from .queues import SynapticRing, expand_spikes
from .transport import Transport, TransportError

SEND_MODES = ("collective", "p2p")
ROUTE_MODES = ("flat", "broker")


class ExchangeError(RuntimeError):
    pass


@dataclass
class NodeMap:
    """Groups ranks into nodes; node ``k`` gets broker endpoint ``n_ranks + k``."""

    node_of_rank: np.ndarray

    @classmethod
    def contiguous(cls, n_ranks: int, ranks_per_node: int | None) -> "NodeMap":
        per = n_ranks if ranks_per_node is None else ranks_per_node
        if per < 1:
            raise ExchangeError("ranks_per_node must be >= 1")
        return cls(np.arange(n_ranks, dtype=np.int64) // per)

    @property
    def n_ranks(self) -> int:
        return int(self.node_of_rank.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.node_of_rank.max()) + 1 if self.n_ranks else 0

    def ranks_on(self, node: int) -> list[int]:
        return [int(r) for r in np.flatnonzero(self.node_of_rank == node)]

    def broker(self, node: int) -> int:
        return self.n_ranks + node

    def node_of_endpoint(self, ep: int) -> int:
        return int(self.node_of_rank[ep]) if ep < self.n_ranks else ep - self.n_ranks

    def validate(self) -> None:
        nodes = np.unique(self.node_of_rank)
        if nodes.shape[0] and not np.array_equal(nodes, np.arange(nodes.shape[0])):
            raise ExchangeError("node ids must be contiguous from 0 with no empty node")


@dataclass
class BrokerPlan:
    direct: dict[tuple[int, int], np.ndarray]  # intra-node (src rank, dst rank) -> spikes
    gather: dict[int, np.ndarray]  # src node -> spikes collected at its broker
    inter_node: dict[tuple[int, int], np.ndarray]  # (src node, dst node) -> spikes
    scatter: dict[tuple[int, int], np.ndarray]  # (dst node, dst rank) -> spikes


def broker_route(node_map: NodeMap, spikes_by_dst_rank: dict[int, dict[int, np.ndarray]]) -> BrokerPlan:
    """Split per-destination spike lists into direct, broker-to-broker and scatter legs.

    ``spikes_by_dst_rank[src][dst]`` lists the source ids ``src`` would send to
    ``dst`` in flat mode.  Each inter-node leg carries the union of the spikes
    its source node owes any rank of the destination node.
    """
    node_map.validate()
    direct: dict = {}
    inter: dict = {}
    owed: dict = {}
    for src, by_dst in spikes_by_dst_rank.items():
        sn = int(node_map.node_of_rank[src])
        for dst, spikes in by_dst.items():
            if dst == src:
                continue
            dn = int(node_map.node_of_rank[dst])
            spikes = np.asarray(spikes, dtype=np.int64)
            if sn == dn:
                direct[(src, dst)] = spikes
            else:
                inter.setdefault((sn, dn), []).append(spikes)
                owed.setdefault((dn, dst), []).append(spikes)
    inter_node = {k: np.unique(np.concatenate(v)) for k, v in inter.items()}
    gather: dict = {}
    for (sn, _), s in inter_node.items():
        gather.setdefault(sn, []).append(s)
    return BrokerPlan(
        direct=direct,
        gather={k: np.unique(np.concatenate(v)) for k, v in gather.items()},
        inter_node=inter_node,
        scatter={k: np.unique(np.concatenate(v)) for k, v in owed.items()},
    )


@dataclass
class LocalSlice:
    """Synapses of every source neuron whose targets live on one rank."""

    indptr: np.ndarray  # int64, n_neurons + 1, indexed by global source id
    tgt_local: np.ndarray  # int32
    delays: np.ndarray  # uint8

    @classmethod
    def build(cls, topo: Topology, partition: PartitionMap, rank: int, sources: np.ndarray | None = None,
              local_index: np.ndarray | None = None) -> "LocalSlice":
        if sources is None:
            sources = topo.sources()
        if local_index is None:
            local_index = local_indices(partition)
        keep = partition.rank_of[topo.targets] == rank
        counts = np.bincount(sources[keep], minlength=topo.n_neurons)
        indptr = np.zeros(topo.n_neurons + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(indptr, local_index[topo.targets[keep]].astype(np.int32), topo.delays[keep])


def local_indices(partition: PartitionMap) -> np.ndarray:
    """Position of each neuron within its owning rank's ascending id list."""
    out = np.empty(partition.rank_of.shape[0], dtype=np.int64)
    for r in range(partition.n_ranks):
        owned = partition.owned(r)
        out[owned] = np.arange(owned.shape[0])
    return out


@dataclass
class SimulationPlan:
    """Everything the workers share read-only."""

    topology: Topology
    partition: PartitionMap
    routing: RoutingTable
    slices: list[LocalSlice]
    node_map: NodeMap
    src_wq: np.ndarray  # fixed-point weight per source neuron
    targets_on_node: np.ndarray  # bool (n_neurons, n_nodes)

    @classmethod
    def build(cls, topo: Topology, partition: PartitionMap, routing: RoutingTable, node_map: NodeMap,
              slices: list[LocalSlice] | None = None) -> "SimulationPlan":
        if node_map.n_ranks != partition.n_ranks:
            raise ExchangeError("node map and partition disagree on the rank count")
        node_map.validate()
        if slices is None:
            sources = topo.sources()
            li = local_indices(partition)
            slices = [LocalSlice.build(topo, partition, r, sources, li) for r in range(partition.n_ranks)]
        wq = np.asarray([dynamics.quantize_weight(topo.config.weight_exc),
                         dynamics.quantize_weight(topo.config.weight_inh)], dtype=np.int64)
        src_wq = np.where(topo.is_excitatory, wq[0], wq[1]).astype(np.int64)
        on_node = np.zeros((topo.n_neurons, node_map.n_nodes), dtype=np.bool_)
        for k in range(node_map.n_nodes):
            on_node[:, k] = routing.targets_on[:, node_map.ranks_on(k)].any(axis=1)
        return cls(topo, partition, routing, slices, node_map, src_wq, on_node)


@dataclass
class EndpointResult:
    endpoint: int
    role: str
    phases: PhaseTimes
    packet_log: np.ndarray  # (k, 4): step, src, dst, bytes
    raster_steps: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    raster_ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    internal_events: int = 0
    external_events: int = 0
    spikes_sent: int = 0
    spikes_received: int = 0


class _Endpoint:
    def __init__(self, ep: int, transport: Transport, send_mode: str):
        self.ep = ep
        self.transport = transport
        self.collective = send_mode == "collective"
        self.timer = PhaseTimer()
        self.log: list[tuple[int, int, int, int]] = []
        self.spikes_sent = 0
        self.spikes_received = 0

    def send_spikes(self, dst: int, step: int, spikes: np.ndarray) -> None:
        if spikes.shape[0] == 0 and not self.collective:
            return
        for pkt in pack_packets(dst, step, spikes):
            self.transport.send(self.ep, dst, pkt)
            self.log.append((step, self.ep, dst, len(pkt)))
        self.spikes_sent += int(spikes.shape[0])

    def receive_spikes(self, step: int) -> np.ndarray:
        got = self.transport.receive_all(self.ep, step)
        if not got:
            return np.empty(0, dtype=np.int64)
        parts = [unpack_packet(data)[1]["source"] for _, data in got]
        spikes = np.concatenate(parts).astype(np.int64)
        self.spikes_received += int(spikes.shape[0])
        return spikes

    def packet_log(self) -> np.ndarray:
        return np.asarray(self.log, dtype=np.int64).reshape(-1, 4)


class RankWorker(_Endpoint):
    """Owns a slice of neurons and runs dynamics plus exchange for it."""

    def __init__(self, rank: int, plan: SimulationPlan, transport: Transport, params: dynamics.LifcaParams,
                 stimulus: dynamics.ExternalStimulus, seed: int, route_mode: str = "flat",
                 send_mode: str = "collective"):
        super().__init__(rank, transport, send_mode)
        self.rank = rank
        self.plan = plan
        self.brokered = route_mode == "broker"
        self.owned = plan.partition.owned(rank)
        n = self.owned.shape[0]
        self.v = np.full(n, params.v_rest)
        self.c = np.zeros(n)
        self.until = np.full(n, -1, dtype=np.int64)
        self.ring = SynapticRing(n, DELAY_HORIZON)
        self.inq = np.zeros(n, dtype=np.int64)
        self.ext = np.zeros(n, dtype=np.int64)
        self.spk = np.empty(n, dtype=np.int64)
        self.pargs = dynamics.population_args(params)
        self.ext_wq = dynamics.quantize_weight(stimulus.weight)
        self.cdf = rng.poisson_cdf_table(stimulus.mean_events(params.dt))
        self.seed = np.uint64(seed)
        self.slice = plan.slices[rank]
        self.raster: list[tuple[int, np.ndarray]] = []
        self.internal_events = 0
        self.external_events = 0
        nm = plan.node_map
        self.node = int(nm.node_of_rank[rank])
        dests = plan.routing.subscribed(rank)
        if self.brokered:
            self.direct = [d for d in dests if nm.node_of_rank[d] == self.node]
            others = [k for k in range(nm.n_nodes) if k != self.node]
            self.off_node_mask = plan.targets_on_node[:, others].any(axis=1) if others else None
            self.uses_broker = bool(others) and bool(self.off_node_mask[self.owned].any())
        else:
            self.direct = dests
            self.uses_broker = False

    def step(self, t: int) -> None:
        timer = self.timer
        s = self.slice
        self.ring.drain(t, self.inq)
        timer.lap("memory_management")

        self.external_events += rng.poisson_counts(self.seed, self.owned, t, self.cdf, self.ext)
        n_spk = dynamics.step_population(self.v, self.c, self.until, self.inq, self.ext, self.ext_wq, t,
                                         *self.pargs, self.spk)
        fired = self.owned[self.spk[:n_spk]]
        if n_spk:
            self.raster.append((t, fired))
        timer.lap("computation")

        self.internal_events += expand_spikes(fired, t, s.indptr, s.tgt_local, s.delays,
                                              self.plan.src_wq, self.ring.buf)
        timer.lap("memory_management")

        targets_on = self.plan.routing.targets_on
        for dst in self.direct:
            self.send_spikes(dst, t, fired[targets_on[fired, dst]])
        if self.uses_broker:
            self.send_spikes(self.plan.node_map.broker(self.node), t, fired[self.off_node_mask[fired]])
        timer.lap("communication")

        self.transport.sync(self.ep)
        timer.lap("synchronization")
        incoming = self.receive_spikes(t)
        timer.lap("communication")
        if incoming.shape[0]:
            self.internal_events += expand_spikes(incoming, t, s.indptr, s.tgt_local, s.delays,
                                                  self.plan.src_wq, self.ring.buf)
        timer.lap("memory_management")

        if self.brokered:
            # round 2 is broker-to-broker; round 3 brings the broker's scatter
            self.transport.sync(self.ep)
            self.transport.sync(self.ep)
            timer.lap("synchronization")
            incoming = self.receive_spikes(t)
            timer.lap("communication")
            if incoming.shape[0]:
                self.internal_events += expand_spikes(incoming, t, s.indptr, s.tgt_local, s.delays,
                                                      self.plan.src_wq, self.ring.buf)
            timer.lap("memory_management")

    def result(self) -> EndpointResult:
        if self.raster:
            steps = np.concatenate([np.full(ids.shape[0], t, dtype=np.int64) for t, ids in self.raster])
            ids = np.concatenate([ids for _, ids in self.raster])
        else:
            steps = ids = np.empty(0, dtype=np.int64)
        return EndpointResult(
            self.ep, "rank", PhaseTimes.from_timer(self.timer), self.packet_log(), steps, ids,
            self.internal_events, self.external_events, self.spikes_sent, self.spikes_received,
        )


class BrokerWorker(_Endpoint):
    """Relays a node's inter-node spikes: gather, broker-to-broker, scatter."""

    def __init__(self, node: int, plan: SimulationPlan, transport: Transport, send_mode: str = "collective"):
        nm = plan.node_map
        super().__init__(nm.broker(node), transport, send_mode)
        self.node = node
        self.plan = plan
        on_node = plan.targets_on_node
        mine = np.zeros(plan.topology.n_neurons, dtype=np.bool_)
        local_ranks = nm.ranks_on(node)
        for r in local_ranks:
            mine[plan.partition.owned(r)] = True
        self.peer_nodes = [k for k in range(nm.n_nodes) if k != node and on_node[mine, k].any()]
        foreign = ~mine
        self.scatter_ranks = [
            r for r in local_ranks if plan.routing.targets_on[foreign, r].any()
        ]

    def step(self, t: int) -> None:
        timer = self.timer
        nm = self.plan.node_map
        self.transport.sync(self.ep)
        timer.lap("synchronization")
        gathered = np.unique(self.receive_spikes(t))
        for k in self.peer_nodes:
            self.send_spikes(nm.broker(k), t, gathered[self.plan.targets_on_node[gathered, k]])
        timer.lap("communication")
        self.transport.sync(self.ep)
        timer.lap("synchronization")
        inbound = np.unique(self.receive_spikes(t))
        targets_on = self.plan.routing.targets_on
        for r in self.scatter_ranks:
            self.send_spikes(r, t, inbound[targets_on[inbound, r]])
        timer.lap("communication")
        self.transport.sync(self.ep)
        timer.lap("synchronization")

    def result(self) -> EndpointResult:
        return EndpointResult(self.ep, "broker", PhaseTimes.from_timer(self.timer), self.packet_log(),
                              spikes_sent=self.spikes_sent, spikes_received=self.spikes_received)


def exchange_step(worker: RankWorker, t: int) -> None:
    """Advance one rank through step ``t``: dynamics, send, barrier, receive, enqueue."""
    worker.step(t)


def run_workers(workers: list, n_steps: int, transport: Transport) -> list[EndpointResult]:
    """Drive every endpoint in its own thread for ``n_steps`` and collect results."""
    errors: list[BaseException] = []

    def loop(w):
        try:
            w.timer.start()
            for t in range(n_steps):
                w.step(t)
            w.timer.stop()
        except BaseException as exc:  # noqa: BLE001 - re-raised by the driver
            errors.append(exc)
            transport.abort()

    if len(workers) == 1:
        loop(workers[0])
    else:
        threads = [threading.Thread(target=loop, args=(w,), name=f"endpoint-{w.ep}") for w in workers]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    if errors:
        # a failing worker breaks the barrier for everyone; report the root cause
        primary = [e for e in errors if not isinstance(e, TransportError)]
        raise (primary or errors)[0]
    return [w.result() for w in workers]
