"""Column-grid network construction, partitioning and routing.

Neurons are numbered column by column: column ``k`` (row-major,
``k = y * grid_x + x``) owns ids ``[k * npc, (k + 1) * npc)`` and the first
``round(excitatory_fraction * npc)`` of them are excitatory.

Synapse tables are stored in CSR form (``indptr``, ``targets``, ``delays``);
weights depend only on the source population and are kept per source neuron.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numba as nb
import numpy as np

from . import rng

# delay horizon in steps; delays must stay strictly below it
DELAY_HORIZON = 16

KERNELS = ("moore-uniform", "gaussian")


class TopologyError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class GridConfig:
    grid_x: int = 4
    grid_y: int = 4
    neurons_per_column: int = 1250
    excitatory_fraction: float = 0.8
    out_degree_exc: int = 1000
    out_degree_inh: int = 1000
    intra_fraction: float = 0.8
    remote_kernel: str = "moore-uniform"
    kernel_sigma: float = 1.0
    delay_range: tuple[int, int] = (1, 15)
    weight_exc: float = 0.03
    weight_inh: float = -0.08
    seed: int = 12345

    def __post_init__(self):
        object.__setattr__(self, "delay_range", tuple(int(d) for d in self.delay_range))

    @property
    def n_columns(self) -> int:
        return self.grid_x * self.grid_y

    @property
    def n_neurons(self) -> int:
        return self.n_columns * self.neurons_per_column

    @property
    def n_exc_per_column(self) -> int:
        return round_half_up(self.excitatory_fraction * self.neurons_per_column)

    def validate(self) -> None:
        if self.grid_x < 1 or self.grid_y < 1:
            raise TopologyError(f"grid must be at least 1x1, got {self.grid_x}x{self.grid_y}")
        if self.neurons_per_column < 1:
            raise TopologyError("neurons_per_column must be >= 1")
        if not 0.0 <= self.excitatory_fraction <= 1.0:
            raise TopologyError("excitatory_fraction must lie in [0, 1]")
        if not 0.0 < self.intra_fraction <= 1.0:
            raise TopologyError("intra_fraction must lie in (0, 1]")
        if self.out_degree_exc < 0 or self.out_degree_inh < 0:
            raise TopologyError("out-degrees must be non-negative")
        d_min, d_max = self.delay_range
        if d_min < 1 or d_max < d_min or d_max >= DELAY_HORIZON:
            raise TopologyError(
                f"delay_range must satisfy 1 <= d_min <= d_max < {DELAY_HORIZON}, got {self.delay_range}"
            )
        if self.remote_kernel not in KERNELS:
            raise TopologyError(f"unknown remote kernel {self.remote_kernel!r}")
        if self.remote_kernel == "gaussian" and self.kernel_sigma <= 0:
            raise TopologyError("gaussian kernel needs sigma > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise TopologyError("seed must be a 64-bit unsigned value")
        n_exc = self.n_exc_per_column
        if self.neurons_per_column > n_exc and self.out_degree_inh > n_exc:
            raise TopologyError(
                f"inhibitory out-degree {self.out_degree_inh} exceeds the {n_exc} excitatory targets in a column"
            )
        if n_exc and self.intra_count() > self.neurons_per_column - 1:
            raise TopologyError(
                f"{self.intra_count()} intra-column targets requested but a column offers only "
                f"{self.neurons_per_column - 1}"
            )

    def intra_count(self) -> int:
        return round_half_up(self.intra_fraction * self.out_degree_exc)


@dataclass
class ConnectivityStats:
    n_synapses: int
    mean_out_degree: float
    exc_intra_share: float
    inh_intra_exc_share: float
    mean_delay: float


@dataclass
class Topology:
    config: GridConfig
    indptr: np.ndarray  # int64, n_neurons + 1
    targets: np.ndarray  # uint32
    delays: np.ndarray  # uint8
    stats: ConnectivityStats | None = None

    @property
    def n_neurons(self) -> int:
        return self.config.n_neurons

    @property
    def n_synapses(self) -> int:
        return int(self.targets.shape[0])

    @property
    def column_of(self) -> np.ndarray:
        return np.arange(self.n_neurons, dtype=np.int64) // self.config.neurons_per_column

    @property
    def is_excitatory(self) -> np.ndarray:
        return (np.arange(self.n_neurons) % self.config.neurons_per_column) < self.config.n_exc_per_column

    @property
    def out_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def source_weights(self) -> np.ndarray:
        """Weight (mV) carried by every synapse of each source neuron."""
        return np.where(self.is_excitatory, self.config.weight_exc, self.config.weight_inh)

    def synapses(self, src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lo, hi = self.indptr[src], self.indptr[src + 1]
        w = np.full(hi - lo, self.source_weights[src])
        return self.targets[lo:hi], self.delays[lo:hi], w

    def sources(self) -> np.ndarray:
        """Source id of every synapse, aligned with ``targets``."""
        return np.repeat(np.arange(self.n_neurons, dtype=np.int64), self.out_degree)

    def iter_dump_lines(self) -> Iterator[str]:
        weights = self.source_weights
        for src in range(self.n_neurons):
            lo, hi = self.indptr[src], self.indptr[src + 1]
            w = weights[src]
            for j in range(lo, hi):
                yield f"{src},{self.targets[j]},{self.delays[j]},{w!r}\n"

    def dump(self, path) -> None:
        """Write ``src_id,tgt_id,delay,weight`` lines sorted by source."""
        with open(path, "w") as fh:
            fh.writelines(self.iter_dump_lines())


def neighbour_kernel(config: GridConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-column remote-target distribution as ragged arrays.

    Returns ``(offsets, columns, cumulative)``: the neighbours of column ``k``
    are ``columns[offsets[k]:offsets[k+1]]`` with cumulative probabilities in
    the same slice.  Neighbours falling outside the grid are dropped and the
    remaining weights renormalized.
    """
    gx, gy = config.grid_x, config.grid_y
    if config.remote_kernel == "moore-uniform":
        radius = 1
    else:
        radius = max(1, math.ceil(3 * config.kernel_sigma))
    offsets = [0]
    cols: list[int] = []
    cum: list[float] = []
    for k in range(gx * gy):
        x, y = k % gx, k // gx
        nb_cols, nb_w = [], []
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = x + dx, y + dy
                if not (0 <= nx < gx and 0 <= ny < gy):
                    continue
                if config.remote_kernel == "moore-uniform":
                    w = 1.0
                else:
                    w = math.exp(-(dx * dx + dy * dy) / (2.0 * config.kernel_sigma**2))
                nb_cols.append(ny * gx + nx)
                nb_w.append(w)
        if nb_w:
            c = np.cumsum(nb_w) / sum(nb_w)
            c[-1] = 1.0
            cum.extend(c.tolist())
            cols.extend(nb_cols)
        offsets.append(len(cols))
    return (
        np.asarray(offsets, dtype=np.int64),
        np.asarray(cols, dtype=np.int64),
        np.asarray(cum, dtype=np.float64),
    )


@nb.njit(cache=True)
def _floyd_sample(seed, stream, key, n, k, scratch, out):
    """k distinct values from range(n) (Floyd's algorithm); scratch must be all False."""
    m = 0
    for j in range(n - k, n):
        t = rng.counter_randbelow(seed, stream, key, j, j + 1)
        if scratch[t]:
            t = j
        scratch[t] = True
        out[m] = t
        m += 1
    for i in range(k):
        scratch[out[i]] = False


@nb.njit(cache=True)
def _generate(
    seed, n_neurons, npc, n_exc, n_intra, indptr, k_off, k_cols, k_cum, d_min, d_max, targets, delays
):
    n_delays = d_max - d_min + 1
    for n in range(n_neurons):
        col = n // npc
        local = n - col * npc
        base = col * npc
        lo = indptr[n]
        deg = indptr[n + 1] - lo
        if deg == 0:
            continue
        row = np.empty(deg, dtype=np.int64)
        scratch = np.zeros(npc, dtype=np.bool_)
        picks = np.empty(deg, dtype=np.int64)
        if local < n_exc:
            has_nb = k_off[col + 1] > k_off[col]
            n_in = n_intra if has_nb else deg
            _floyd_sample(seed, rng.STREAM_INTRA, n, npc - 1, n_in, scratch, picks)
            for i in range(n_in):
                c = picks[i]
                if c >= local:
                    c += 1
                row[i] = base + c
            for i in range(n_in, deg):
                u = rng.counter_uniform(seed, rng.STREAM_REMOTE_COLUMN, n, i)
                j = k_off[col]
                while j < k_off[col + 1] - 1 and u >= k_cum[j]:
                    j += 1
                t = rng.counter_randbelow(seed, rng.STREAM_REMOTE_TARGET, n, i, npc)
                row[i] = k_cols[j] * npc + t
        else:
            _floyd_sample(seed, rng.STREAM_INHIBITORY, n, n_exc, deg, scratch, picks)
            for i in range(deg):
                row[i] = base + picks[i]
        # canonical order: by target, then delay
        for i in range(deg):
            d = d_min + rng.counter_randbelow(seed, rng.STREAM_DELAY, n, i, n_delays)
            row[i] = row[i] * 256 + d
        row.sort()
        for i in range(deg):
            targets[lo + i] = row[i] // 256
            delays[lo + i] = row[i] % 256


def build_topology(config: GridConfig) -> Topology:
    """Lay out the column grid and generate its synapse tables."""
    config.validate()
    return generate_synapses(config)


def generate_synapses(config: GridConfig) -> Topology:
    npc = config.neurons_per_column
    n_exc = config.n_exc_per_column
    n = config.n_neurons
    is_exc = (np.arange(n) % npc) < n_exc
    degree = np.where(is_exc, config.out_degree_exc, config.out_degree_inh).astype(np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(degree, out=indptr[1:])
    targets = np.empty(indptr[-1], dtype=np.uint32)
    delays = np.empty(indptr[-1], dtype=np.uint8)
    k_off, k_cols, k_cum = neighbour_kernel(config)
    d_min, d_max = config.delay_range
    _generate(
        np.uint64(config.seed), n, npc, n_exc, config.intra_count(), indptr,
        k_off, k_cols, k_cum, d_min, d_max, targets, delays,
    )
    topo = Topology(config, indptr, targets, delays)
    topo.stats = connectivity_stats(topo)
    return topo


def connectivity_stats(topo: Topology) -> ConnectivityStats:
    src = topo.sources()
    same_col = (topo.targets.astype(np.int64) // topo.config.neurons_per_column) == (
        src // topo.config.neurons_per_column
    )
    is_exc = topo.is_excitatory
    src_exc = is_exc[src]
    n_exc_syn = int(src_exc.sum())
    n_inh_syn = topo.n_synapses - n_exc_syn
    tgt_exc = is_exc[topo.targets]
    return ConnectivityStats(
        n_synapses=topo.n_synapses,
        mean_out_degree=topo.n_synapses / topo.n_neurons,
        exc_intra_share=float(same_col[src_exc].sum() / n_exc_syn) if n_exc_syn else 0.0,
        inh_intra_exc_share=(
            float((same_col & tgt_exc)[~src_exc].sum() / n_inh_syn) if n_inh_syn else 1.0
        ),
        mean_delay=float(topo.delays.mean()) if topo.n_synapses else 0.0,
    )


def morton_order(grid_x: int, grid_y: int) -> np.ndarray:
    """Column ids sorted along a Z-order curve (keeps spatial neighbours together)."""

    def spread(v: int) -> int:
        out = 0
        for bit in range(32):
            out |= ((v >> bit) & 1) << (2 * bit)
        return out

    keys = [(spread(k % grid_x) | (spread(k // grid_x) << 1), k) for k in range(grid_x * grid_y)]
    return np.asarray([k for _, k in sorted(keys)], dtype=np.int64)


@dataclass
class PartitionMap:
    n_ranks: int
    ranges: list[list[tuple[int, int]]]  # per rank, half-open id ranges in ascending order
    columns_per_rank: Fraction
    rank_of: np.ndarray = field(repr=False)  # int32 per neuron

    def owned(self, rank: int) -> np.ndarray:
        return np.concatenate(
            [np.arange(lo, hi, dtype=np.int64) for lo, hi in self.ranges[rank]]
        ) if self.ranges[rank] else np.empty(0, dtype=np.int64)

    def counts(self) -> np.ndarray:
        return np.asarray([sum(hi - lo for lo, hi in r) for r in self.ranges])


def partition_columns(topo: Topology, n_ranks: int) -> PartitionMap:
    """Assign whole columns (or column slices) to ranks."""
    cfg = topo.config
    n_cols, npc = cfg.n_columns, cfg.neurons_per_column
    if n_ranks < 1:
        raise TopologyError("n_ranks must be >= 1")
    if n_ranks > topo.n_neurons:
        raise TopologyError(f"{n_ranks} ranks exceed {topo.n_neurons} neurons")
    ranges: list[list[tuple[int, int]]] = [[] for _ in range(n_ranks)]
    if n_cols >= n_ranks:
        order = morton_order(cfg.grid_x, cfg.grid_y)
        for r, chunk in enumerate(np.array_split(order, n_ranks)):
            ranges[r] = _merge_ranges(sorted((int(c) * npc, int(c + 1) * npc) for c in chunk))
    else:
        ranks_per_col = [len(a) for a in np.array_split(np.arange(n_ranks), n_cols)]
        r = 0
        for c in range(n_cols):
            k = ranks_per_col[c]
            if k > npc:
                raise TopologyError(f"column of {npc} neurons cannot be split over {k} ranks")
            bounds = [c * npc + (i * npc) // k for i in range(k + 1)]
            for i in range(k):
                ranges[r] = [(bounds[i], bounds[i + 1])]
                r += 1
    rank_of = np.empty(topo.n_neurons, dtype=np.int32)
    for r, rr in enumerate(ranges):
        for lo, hi in rr:
            rank_of[lo:hi] = r
    return PartitionMap(n_ranks, ranges, Fraction(n_cols, n_ranks), rank_of)


def _merge_ranges(ranges: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for lo, hi in ranges:
        if out and out[-1][1] == lo:
            out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    return out


@dataclass
class RoutingTable:
    destinations: list[list[int]]  # per source rank, sorted, never contains itself
    # targets_on[n, r]: neuron n has at least one synapse onto rank r
    targets_on: np.ndarray = field(repr=False)

    def subscribed(self, src_rank: int) -> list[int]:
        return self.destinations[src_rank]


@nb.njit(cache=True)
def _scan_targets(indptr, targets, rank_of, out):
    for n in range(indptr.shape[0] - 1):
        for j in range(indptr[n], indptr[n + 1]):
            out[n, rank_of[targets[j]]] = True


def build_routing_tables(topo: Topology, partition: PartitionMap) -> RoutingTable:
    targets_on = np.zeros((topo.n_neurons, partition.n_ranks), dtype=np.bool_)
    _scan_targets(topo.indptr, topo.targets, partition.rank_of, targets_on)
    dests = []
    for s in range(partition.n_ranks):
        owned = partition.owned(s)
        reach = targets_on[owned].any(axis=0)
        reach[s] = False
        dests.append([int(r) for r in np.flatnonzero(reach)])
    return RoutingTable(dests, targets_on)
