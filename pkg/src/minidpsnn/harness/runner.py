"""Simulation driver, strong-scaling sweeps and the real-time check."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from .. import instrumentation as ins
from ..exchange.engine import BrokerWorker, EndpointResult, NodeMap, RankWorker, SimulationPlan, run_workers
from ..exchange.transport import make_transport
from ..topology import (
    GridConfig,
    PartitionMap,
    RoutingTable,
    Topology,
    build_routing_tables,
    build_topology,
    partition_columns,
)
from .config import RunConfig
from .report import RunReport, ScalingReport, ScalingRow

log = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


@nb.njit(cache=True)
def _fnv1a(data, h):
    for b in data:
        h = (h ^ np.uint64(b)) * np.uint64(FNV_PRIME)
    return h


def fnv1a_64(data: bytes) -> int:
    return int(_fnv1a(np.frombuffer(data, dtype=np.uint8), np.uint64(FNV_OFFSET)))


def canonical_raster(steps: np.ndarray, ids: np.ndarray) -> str:
    """``step,neuron_id`` lines sorted by step, then id."""
    order = np.lexsort((ids, steps))
    return "".join(f"{s},{n}\n" for s, n in zip(steps[order].tolist(), ids[order].tolist()))


def raster_hash(steps: np.ndarray, ids: np.ndarray) -> str:
    return f"{fnv1a_64(canonical_raster(steps, ids).encode()):016x}"


class PlanCache:
    """Reuses topology and per-partition plans across runs of a sweep."""

    def __init__(self):
        self._topo: dict[GridConfig, Topology] = {}
        self._parts: dict[tuple[GridConfig, int], tuple[PartitionMap, RoutingTable, list]] = {}

    def topology(self, grid: GridConfig) -> Topology:
        if grid not in self._topo:
            self._topo.clear()
            self._parts.clear()
            self._topo[grid] = build_topology(grid)
        return self._topo[grid]

    def plan(self, grid: GridConfig, n_ranks: int, node_map: NodeMap) -> SimulationPlan:
        topo = self.topology(grid)
        key = (grid, n_ranks)
        if key not in self._parts:
            part = partition_columns(topo, n_ranks)
            routing = build_routing_tables(topo, part)
            plan = SimulationPlan.build(topo, part, routing, node_map)
            self._parts[key] = (part, routing, plan.slices)
            return plan
        part, routing, slices = self._parts[key]
        return SimulationPlan.build(topo, part, routing, node_map, slices)


@dataclass
class RunResult:
    report: RunReport
    endpoints: list[EndpointResult]
    raster_steps: np.ndarray
    raster_ids: np.ndarray
    plan: SimulationPlan = field(repr=False)

    @property
    def packet_log(self) -> np.ndarray:
        logs = [e.packet_log for e in self.endpoints]
        return np.concatenate(logs) if logs else np.empty((0, 4), dtype=np.int64)

    def canonical_raster(self) -> str:
        return canonical_raster(self.raster_steps, self.raster_ids)


def inter_node_streams(packet_log: np.ndarray, node_map: NodeMap) -> np.ndarray:
    """Distinct inter-node ``(src, dst)`` endpoint pairs carrying packets, per step."""
    log = np.asarray(packet_log, dtype=np.int64).reshape(-1, 4)
    if log.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    node = np.asarray([node_map.node_of_endpoint(e) for e in range(int(log[:, 1:3].max()) + 1)])
    cross = log[node[log[:, 1]] != node[log[:, 2]]]
    n_steps = int(log[:, 0].max()) + 1
    out = np.zeros(n_steps, dtype=np.int64)
    if cross.shape[0]:
        pairs = np.unique(cross[:, :3], axis=0)
        np.add.at(out, pairs[:, 0], 1)
    return out


def _jsonable(x):
    return json.loads(json.dumps(x))


def run_simulation(config: RunConfig, cache: PlanCache | None = None, keep_raster: bool = True) -> RunResult:
    """Build, partition and run one configuration; returns the report and raw results."""
    config.validate()
    cache = cache or PlanCache()
    node_map = NodeMap.contiguous(config.n_ranks, config.ranks_per_node)
    plan = cache.plan(config.grid, config.n_ranks, node_map)
    brokered = config.route_mode == "broker"
    n_endpoints = config.n_ranks + (node_map.n_nodes if brokered else 0)
    transport = make_transport(config.backend, n_endpoints)
    try:
        workers: list = [
            RankWorker(r, plan, transport, config.neuron, config.stimulus, config.seed,
                       config.route_mode, config.send_mode)
            for r in range(config.n_ranks)
        ]
        if brokered:
            workers += [BrokerWorker(k, plan, transport, config.send_mode) for k in range(node_map.n_nodes)]
        t0 = time.monotonic()
        results = run_workers(workers, config.n_steps, transport)
        wall = time.monotonic() - t0
    finally:
        transport.close()

    ranks = [r for r in results if r.role == "rank"]
    steps = np.concatenate([r.raster_steps for r in ranks])
    ids = np.concatenate([r.raster_ids for r in ranks])
    packet_log = np.concatenate([r.packet_log for r in results])
    n_spikes = int(ids.shape[0])
    n_neurons = plan.topology.n_neurons
    streams = inter_node_streams(packet_log, node_map)
    report = RunReport(
        config=_jsonable(config.to_dict()),
        wall_seconds=wall,
        simulated_seconds=config.n_steps * config.neuron.dt / 1000.0,
        n_neurons=n_neurons,
        n_synapses=plan.topology.n_synapses,
        spike_count=n_spikes,
        mean_rate_hz=n_spikes / (n_neurons * config.n_steps * config.neuron.dt / 1000.0),
        synaptic_events=sum(r.internal_events + r.external_events for r in ranks),
        internal_events=sum(r.internal_events for r in ranks),
        external_events=sum(r.external_events for r in ranks),
        phases=_jsonable(ins.phase_report([r.phases for r in ranks]).to_dict()),
        broker_phases=(_jsonable(ins.phase_report([r.phases for r in results if r.role == "broker"]).to_dict())
                       if brokered else None),
        traffic=_jsonable(ins.traffic_summary(packet_log).to_dict()),
        inter_node_streams_per_step=float(streams.mean()) if streams.shape[0] else 0.0,
        raster_hash=raster_hash(steps, ids),
    )
    if config.power_log:
        series = ins.read_power_log(config.power_log)
        report.energy = ins.energy_report(series, report.synaptic_events).to_dict()
    log.info("ranks=%d mode=%s/%s wall=%.2fs rate=%.2fHz hash=%s", config.n_ranks, config.route_mode,
             config.send_mode, wall, report.mean_rate_hz, report.raster_hash)
    if not keep_raster:
        steps = ids = np.empty(0, dtype=np.int64)
    return RunResult(report, results, steps, ids, plan)


def strong_scaling_sweep(config: RunConfig, rank_list, cache: PlanCache | None = None) -> ScalingReport:
    """One run per rank count; identical raster hashes expected across rows."""
    rank_list = [int(r) for r in rank_list]
    if not rank_list:
        raise ValueError("rank_list must not be empty")
    if rank_list != sorted(rank_list):
        raise ValueError("rank_list must be ascending")
    cache = cache or PlanCache()
    rows: list[ScalingRow] = []
    failed = None
    for n in rank_list:
        try:
            rep = run_simulation(replace(config, n_ranks=n), cache, keep_raster=False).report
        except Exception as exc:  # noqa: BLE001 - partial report is returned flagged
            log.error("sweep run with %d ranks failed: %s", n, exc)
            failed = f"{n} ranks: {exc}"
            break
        rows.append(ScalingRow.from_report(n, rep))
    return ScalingReport.build(_jsonable(config.to_dict()), rows, failed)


def realtime_check(report: RunReport) -> tuple[float, bool]:
    """Wall-clock over simulated time; passes when the run kept pace (ratio <= 1)."""
    ratio = report.wall_seconds / report.simulated_seconds
    return ratio, ratio <= 1.0
