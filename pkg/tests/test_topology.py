from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

import oracles
from conftest import SMALL
from minidpsnn.topology import (
    GridConfig,
    Topology,
    TopologyError,
    build_routing_tables,
    build_topology,
    connectivity_stats,
    morton_order,
    neighbour_kernel,
    partition_columns,
    round_half_up,
)


def _shell(cfg: GridConfig) -> Topology:
    """Topology without synapses, enough for partitioning large grids."""
    n = cfg.n_neurons
    return Topology(cfg, np.zeros(n + 1, dtype=np.int64), np.empty(0, np.uint32), np.empty(0, np.uint8))


def test_neuron_counts():
    assert GridConfig(grid_x=12, grid_y=12).n_neurons == 180_000
    topo = build_topology(GridConfig(grid_x=1, grid_y=1, out_degree_inh=900))
    assert topo.n_neurons == 1250
    assert set(topo.column_of.tolist()) == {0}
    assert topo.is_excitatory.sum() == 1000


def test_single_column_keeps_every_synapse_local():
    topo = build_topology(GridConfig(grid_x=1, grid_y=1, neurons_per_column=300, out_degree_exc=100,
                                     out_degree_inh=50))
    assert np.all(topo.targets < 300)
    assert np.all(topo.out_degree[:240] == 100)


def test_regeneration_is_byte_identical(small_topo, tmp_path):
    again = build_topology(SMALL)
    assert np.array_equal(small_topo.indptr, again.indptr)
    assert np.array_equal(small_topo.targets, again.targets)
    assert np.array_equal(small_topo.delays, again.delays)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    small_topo.dump(a)
    again.dump(b)
    assert a.read_bytes() == b.read_bytes()
    first = a.read_text().splitlines()[0].split(",")
    assert len(first) == 4 and int(first[0]) == 0


def test_seed_changes_table(small_topo):
    other = build_topology(replace(SMALL, seed=8))
    assert not np.array_equal(small_topo.targets, other.targets)


def test_excitatory_split_per_neuron(small_topo):
    npc = SMALL.neurons_per_column
    col = small_topo.column_of
    n_intra = SMALL.intra_count()
    for n in np.flatnonzero(small_topo.is_excitatory):
        tgt, _, _ = small_topo.synapses(n)
        same = (tgt.astype(np.int64) // npc) == col[n]
        assert same.sum() == n_intra
        assert n not in tgt[same]
        assert np.unique(tgt[same]).shape[0] == n_intra


def test_paper_degree_split():
    cfg = GridConfig(grid_x=2, grid_y=1, neurons_per_column=1250)
    assert cfg.intra_count() == 800
    assert cfg.out_degree_exc - cfg.intra_count() == 200


def test_inhibitory_targets_local_excitatory(small_topo):
    npc, n_exc = SMALL.neurons_per_column, SMALL.n_exc_per_column
    for n in np.flatnonzero(~small_topo.is_excitatory):
        tgt, _, _ = small_topo.synapses(n)
        tgt = tgt.astype(np.int64)
        assert np.all(tgt // npc == n // npc)
        assert np.all(tgt % npc < n_exc)
        assert np.unique(tgt).shape[0] == tgt.shape[0]
    stats = connectivity_stats(small_topo)
    assert stats.inh_intra_exc_share == 1.0


def test_delays_in_range_and_rows_sorted(small_topo):
    d_min, d_max = SMALL.delay_range
    assert small_topo.delays.min() >= d_min and small_topo.delays.max() <= d_max
    for n in range(0, small_topo.n_neurons, 37):
        tgt, dly, _ = small_topo.synapses(n)
        key = tgt.astype(np.int64) * 256 + dly
        assert np.all(np.diff(key) >= 0)


def test_remote_columns_uniform_over_moore_neighbours(small_topo):
    """Centre column of 3x3: each of 8 neighbours gets 1/8 of remote synapses."""
    npc = SMALL.neurons_per_column
    centre = 4
    rows = [n for n in range(centre * npc, (centre + 1) * npc) if small_topo.is_excitatory[n]]
    cols = np.concatenate([small_topo.synapses(n)[0].astype(np.int64) // npc for n in rows])
    remote = cols[cols != centre]
    counts = np.bincount(remote, minlength=9)
    assert counts[centre] == 0
    n = remote.shape[0]
    # binomial 4-sigma band around n/8
    sigma = np.sqrt(n * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts[np.arange(9) != centre] - n / 8) < 4 * sigma)


def test_corner_column_renormalized(small_topo):
    npc = SMALL.neurons_per_column
    rows = [n for n in range(npc) if small_topo.is_excitatory[n]]
    cols = np.concatenate([small_topo.synapses(n)[0].astype(np.int64) // npc for n in rows])
    remote = cols[cols != 0]
    assert set(np.unique(remote).tolist()) == {1, 3, 4}
    counts = np.bincount(remote, minlength=5)[[1, 3, 4]]
    sigma = np.sqrt(remote.shape[0] * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - remote.shape[0] / 3) < 4 * sigma)


def test_gaussian_kernel_normalized_and_decreasing():
    cfg = GridConfig(grid_x=7, grid_y=7, remote_kernel="gaussian", kernel_sigma=1.0)
    off, cols, cum = neighbour_kernel(cfg)
    centre = 24
    sl = slice(off[centre], off[centre + 1])
    p = np.diff(np.concatenate(([0.0], cum[sl])))
    assert abs(p.sum() - 1.0) < 1e-12
    c = cols[sl]
    dist2 = (c % 7 - 3) ** 2 + (c // 7 - 3) ** 2
    order = np.argsort(dist2, kind="stable")
    assert np.all(np.diff(p[order]) <= 1e-15)


@pytest.mark.parametrize(
    "change",
    [
        dict(grid_x=0),
        dict(delay_range=(0, 5)),
        dict(delay_range=(3, 16)),
        dict(delay_range=(5, 3)),
        dict(excitatory_fraction=1.5),
        dict(out_degree_inh=1001),
        dict(neurons_per_column=50, out_degree_exc=100),
        dict(remote_kernel="ring"),
    ],
)
def test_invalid_config(change):
    with pytest.raises(TopologyError):
        build_topology(replace(GridConfig(grid_x=1, grid_y=1), **change))


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 799.5, 800.4)] == [1, 2, 3, 800, 800]


def test_partition_one_column_per_rank():
    part = partition_columns(_shell(GridConfig(grid_x=12, grid_y=12)), 144)
    assert part.columns_per_rank == 1
    assert np.all(part.counts() == 1250)


def test_partition_three_columns_per_rank():
    part = partition_columns(_shell(GridConfig(grid_x=24, grid_y=24)), 192)
    assert part.columns_per_rank == 3
    assert np.all(part.counts() == 3 * 1250)


def test_partition_half_columns():
    part = partition_columns(_shell(GridConfig()), 32)
    assert part.columns_per_rank == Fraction(1, 2)
    assert np.all(part.counts() == 625)


def test_partition_covers_every_neuron_once():
    for n_ranks in (1, 3, 5, 16, 20, 37):
        part = partition_columns(_shell(GridConfig()), n_ranks)
        owned = np.concatenate([part.owned(r) for r in range(n_ranks)])
        assert np.array_equal(np.sort(owned), np.arange(20_000))
        assert np.all(part.rank_of[part.owned(n_ranks - 1)] == n_ranks - 1)


def test_morton_blocks_on_four_ranks():
    part = partition_columns(_shell(GridConfig()), 4)
    blocks = [sorted({int(n) // 1250 for n in part.owned(r)}) for r in range(4)]
    assert blocks == [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]]
    assert morton_order(2, 2).tolist() == [0, 1, 2, 3]


def test_partition_rejects_too_many_ranks():
    with pytest.raises(TopologyError):
        partition_columns(_shell(GridConfig(grid_x=1, grid_y=1, neurons_per_column=4)), 5)
    with pytest.raises(TopologyError):
        partition_columns(_shell(GridConfig()), 0)


def test_routing_single_rank_is_empty(small_topo):
    rt = build_routing_tables(small_topo, partition_columns(small_topo, 1))
    assert rt.destinations == [[]]


@pytest.mark.parametrize("n_ranks", [2, 4, 9, 18])
def test_routing_matches_brute_force(small_topo, n_ranks):
    part = partition_columns(small_topo, n_ranks)
    rt = build_routing_tables(small_topo, part)
    assert rt.destinations == oracles.routing_destinations(small_topo, part.rank_of, n_ranks)
    for s, dests in enumerate(rt.destinations):
        assert s not in dests
    # per-neuron bit agrees with the synapse table
    for n in range(0, small_topo.n_neurons, 53):
        tgt, _, _ = small_topo.synapses(n)
        expect = np.zeros(n_ranks, dtype=bool)
        expect[part.rank_of[tgt]] = True
        assert np.array_equal(rt.targets_on[n], expect)
