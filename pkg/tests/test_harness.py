import csv
import json
from dataclasses import replace

import numpy as np
import pytest

import oracles
from checks import check_self_consistency
from minidpsnn.harness import (
    RunConfig,
    RunReport,
    emit_report,
    energy_config,
    load_report,
    parse_config_text,
    raster_hash,
    realtime_check,
    run_simulation,
    strong_scaling_sweep,
)
from minidpsnn.harness.config import ConfigError
from minidpsnn.harness.runner import canonical_raster, fnv1a_64
from minidpsnn.instrumentation import PHASES
from minidpsnn.topology import GridConfig, TopologyError

TINY = RunConfig(
    grid=GridConfig(grid_x=2, grid_y=2, neurons_per_column=250, out_degree_exc=150, out_degree_inh=100),
    sim_seconds=0.3,
)

CONFIG_TEXT = """
[grid]
grid_x = 3
grid_y = 2
neurons_per_column = 500   # small
out_degree_exc = 300
out_degree_inh = 200
delay_range = 2, 9
remote_kernel = gaussian

[neuron]
g_c = 0.01

[stimulus]
rate = 4.5

[run]
ranks = 4
sim_seconds = 0.5
seed = 77

[exchange]
mode = broker
send = p2p
ranks_per_node = 2
backend = socket

[output]
format = csv
out = results/run.csv
"""


def test_parse_config_text():
    cfg = parse_config_text(CONFIG_TEXT)
    assert (cfg.grid.grid_x, cfg.grid.grid_y, cfg.grid.neurons_per_column) == (3, 2, 500)
    assert cfg.grid.delay_range == (2, 9) and cfg.grid.remote_kernel == "gaussian"
    assert cfg.neuron.g_c == 0.01 and cfg.stimulus.rate == 4.5
    assert (cfg.n_ranks, cfg.sim_seconds, cfg.seed, cfg.grid.seed) == (4, 0.5, 77, 77)
    assert (cfg.route_mode, cfg.send_mode, cfg.ranks_per_node, cfg.backend) == ("broker", "p2p", 2, "socket")
    assert (cfg.format, cfg.out) == ("csv", "results/run.csv")
    assert cfg.n_steps == 500
    cfg.validate()


@pytest.mark.parametrize("text", ["[grid]\ncolumns = 4\n", "[gpu]\nx = 1\n", "[run]\nthreads = 2\n"])
def test_unknown_keys_rejected(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


@pytest.mark.parametrize("change", [dict(sim_seconds=0), dict(n_ranks=0), dict(route_mode="mesh"),
                                    dict(send_mode="bcast"), dict(backend="mpi"), dict(format="xml"),
                                    dict(ranks_per_node=0)])
def test_run_config_validation(change):
    with pytest.raises(ConfigError):
        replace(RunConfig(), **change).validate()


def test_config_dict_roundtrip():
    cfg = parse_config_text(CONFIG_TEXT)
    back = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg


def test_energy_network_shape():
    cfg = energy_config()
    assert cfg.grid.n_neurons == 10_000 and cfg.sim_seconds == 3.0
    g = cfg.grid
    mean_internal = g.excitatory_fraction * g.out_degree_exc + (1 - g.excitatory_fraction) * g.out_degree_inh
    assert mean_internal == pytest.approx(1195.2)
    assert cfg.stimulus.equivalent_synapses == 594 and cfg.stimulus.rate == 3.0


def test_fnv_and_canonical_text():
    for data, h in oracles.FNV_VECTORS.items():
        assert fnv1a_64(data) == h
    steps, ids = np.array([3, 1, 1]), np.array([0, 9, 2])
    assert canonical_raster(steps, ids) == "1,2\n1,9\n3,0\n"
    expected = oracles.fnv1a_64(b"1,2\n1,9\n3,0\n")
    assert raster_hash(steps, ids) == f"{expected:016x}"


def test_frozen_hash(plan_cache):
    cfg = RunConfig(grid=GridConfig(grid_x=2, grid_y=2), sim_seconds=0.5)
    assert run_simulation(cfg, plan_cache, keep_raster=False).report.raster_hash == oracles.FROZEN_HASH_2X2_HALF_SECOND


def test_repeat_runs_identical():
    a = run_simulation(TINY).report
    b = run_simulation(TINY).report
    assert a.raster_hash == b.raster_hash and a.spike_count == b.spike_count
    c = run_simulation(replace(TINY, seed=TINY.seed + 1)).report
    assert c.raster_hash != a.raster_hash


def test_smoke_4x4_one_second(plan_cache):
    rep = run_simulation(RunConfig(sim_seconds=1.0), plan_cache, keep_raster=False).report
    assert rep.spike_count > 0 and rep.n_neurons == 20_000
    total = sum(rep.phases["fractions"].values()) + rep.phases["residual"]
    assert total == pytest.approx(1.0, abs=1e-12)
    assert rep.phases["residual"] < 0.05


def test_report_self_consistency(tmp_path):
    log = tmp_path / "power.csv"
    log.write_text("t,p\n0,40\n1,60\n2,50\n")
    rep = run_simulation(replace(TINY, n_ranks=3, power_log=str(log))).report
    assert rep.energy["joules"] == pytest.approx(105.0)
    check_self_consistency(rep)


@pytest.mark.parametrize("wall,ratio,ok", [(12.0, 1.2, False), (10.0, 1.0, True), (5.0, 0.5, True)])
def test_realtime_check(wall, ratio, ok):
    rep = run_simulation(TINY).report
    rep.wall_seconds, rep.simulated_seconds = wall, 10.0
    r, passed = realtime_check(rep)
    assert r == pytest.approx(ratio) and passed is ok


def test_sweep_rows_and_speedup(plan_cache):
    sweep = strong_scaling_sweep(TINY, [1, 2, 4], plan_cache)
    assert [r.n_ranks for r in sweep.rows] == [1, 2, 4]
    assert sweep.hashes_agree and sweep.failed is None
    assert len({r.spike_count for r in sweep.rows}) == 1
    assert sweep.rows[0].speedup == 1.0
    for r in sweep.rows:
        assert r.speedup == pytest.approx(sweep.rows[0].wall_seconds / r.wall_seconds, rel=1e-9)


def test_sweep_single_entry(plan_cache):
    assert strong_scaling_sweep(TINY, [2], plan_cache).rows[0].speedup == 1.0


@pytest.mark.parametrize("ranks", [[], [4, 2]])
def test_sweep_bad_rank_list(ranks):
    with pytest.raises(ValueError):
        strong_scaling_sweep(TINY, ranks)


def test_sweep_failure_returns_partial():
    sweep = strong_scaling_sweep(TINY, [1, 10_000])
    assert len(sweep.rows) == 1 and "10000" in sweep.failed


def test_emit_json_roundtrip(tmp_path):
    rep = run_simulation(replace(TINY, n_ranks=2)).report
    written = emit_report(rep, "json", tmp_path / "run.json")
    assert load_report(tmp_path / "run.json") == rep
    names = {p.name for p in written}
    assert {"run.json", "run.scaling_curve.csv", "run.phase_stack.csv", "run.packet_stats.csv"} <= names


def test_emit_sweep_csv_and_phase_stack(tmp_path, plan_cache):
    sweep = strong_scaling_sweep(TINY, [1, 2, 4], plan_cache)
    emit_report(sweep, "csv", tmp_path / "sweep.csv")
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    with open(tmp_path / "sweep.phase_stack.csv") as fh:
        for row in csv.DictReader(fh):
            parts = sum(float(row[f"{p}_seconds"]) for p in PHASES) + float(row["residual_seconds"])
            assert parts == pytest.approx(float(row["wall_seconds"]), rel=1e-9)
    emit_report(sweep, "json", tmp_path / "sweep.json")
    assert load_report(tmp_path / "sweep.json") == sweep


def test_emit_energy_bars(tmp_path):
    log = tmp_path / "p.csv"
    log.write_text("0,10\n1,10\n")
    rep = run_simulation(replace(TINY, power_log=str(log))).report
    emit_report(rep, "csv", tmp_path / "r.csv")
    with open(tmp_path / "r.energy_bars.csv") as fh:
        bars = list(csv.DictReader(fh))
    assert float(bars[0]["joules"]) == pytest.approx(10.0)


def test_topology_error_surfaces():
    with pytest.raises(TopologyError):
        run_simulation(replace(TINY, grid=replace(TINY.grid, delay_range=(0, 3))))


@pytest.mark.slow
def test_energy_network_rate_and_events(plan_cache):
    rep = run_simulation(energy_config(), plan_cache, keep_raster=False).report
    assert 3.0 <= rep.mean_rate_hz <= 8.0
    assert abs(rep.synaptic_events - 235e6) / 235e6 <= 0.25
