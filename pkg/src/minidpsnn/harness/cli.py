"""Command-line driver: ``run``, ``sweep``, ``energy``, ``report`` and ``tune``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .. import instrumentation as ins
from ..dynamics import DynamicsError
from ..topology import TopologyError
from .config import ConfigError, RunConfig, load_config, energy_config
from .report import RunReport, emit_report, load_report
from .runner import realtime_check, run_simulation, strong_scaling_sweep

log = logging.getLogger("minidpsnn")

EXIT_OK, EXIT_RUN, EXIT_CONFIG = 0, 1, 2


def _grid(text: str) -> tuple[int, int]:
    try:
        x, y = text.lower().split("x")
        return int(x), int(y)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must look like 4x4, got {text!r}") from exc


def _rank_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"ranks must be integers, got {text!r}") from exc


def _common(p: argparse.ArgumentParser, ranks_help: str, ranks_type) -> None:
    p.add_argument("--config", help="key=value config file with [grid]/[neuron]/[stimulus]/[run]/[exchange] sections")
    p.add_argument("--preset", choices=["default", "energy"], default="default",
                   help="'energy' selects the 10 K-neuron, 3 s energy-to-solution network")
    p.add_argument("--ranks", type=ranks_type, help=ranks_help)
    p.add_argument("--grid", type=_grid, help="column grid, e.g. 4x4")
    p.add_argument("--sim-seconds", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["flat", "broker"])
    p.add_argument("--send", choices=["collective", "p2p"])
    p.add_argument("--ranks-per-node", type=int, help="node grouping for broker routing")
    p.add_argument("--backend", choices=["loopback", "socket"])
    p.add_argument("--power-log", help="CSV power log (t,p or t,i,v) for energy figures")
    p.add_argument("--out", help="report path")
    p.add_argument("--format", choices=["json", "csv"])


def build_config(args) -> RunConfig:
    base = energy_config() if args.preset == "energy" else RunConfig()
    cfg = load_config(args.config, base) if args.config else base
    over = {}
    if args.grid:
        over["grid"] = replace(cfg.grid, grid_x=args.grid[0], grid_y=args.grid[1])
    if args.ranks is not None and isinstance(args.ranks, int):
        over["n_ranks"] = args.ranks
    for flag, name in (("sim_seconds", "sim_seconds"), ("seed", "seed"), ("mode", "route_mode"),
                       ("send", "send_mode"), ("ranks_per_node", "ranks_per_node"), ("backend", "backend"),
                       ("power_log", "power_log"), ("out", "out"), ("format", "format")):
        val = getattr(args, flag)
        if val is not None:
            over[name] = val
    cfg = replace(cfg, **over)
    if "seed" in over:
        cfg = replace(cfg, grid=replace(cfg.grid, seed=cfg.seed))
    cfg.validate()
    return cfg


def _emit(report, cfg_out: str | None, fmt: str) -> None:
    if cfg_out:
        for p in emit_report(report, fmt, cfg_out):
            print(f"wrote {p}")
    else:
        json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
        print()


def cmd_run(args) -> int:
    cfg = build_config(args)
    rep = run_simulation(cfg, keep_raster=False).report
    ratio, ok = realtime_check(rep)
    print(f"ranks={cfg.n_ranks} neurons={rep.n_neurons} rate={rep.mean_rate_hz:.3f} Hz "
          f"spikes={rep.spike_count} events={rep.synaptic_events} wall={rep.wall_seconds:.3f} s "
          f"hash={rep.raster_hash}")
    print(f"realtime ratio {ratio:.3f} ({'pass' if ok else 'fail'})")
    _emit(rep, cfg.out, cfg.format)
    return EXIT_OK


def cmd_sweep(args) -> int:
    ranks = args.ranks if isinstance(args.ranks, list) else [1, 2, 4, 8]
    args.ranks = None
    cfg = build_config(args)
    rep = strong_scaling_sweep(cfg, ranks)
    for row in rep.rows:
        print(f"ranks={row.n_ranks:3d} wall={row.wall_seconds:8.3f} s speedup={row.speedup:6.2f} "
              f"packets/rank={row.packets_per_rank:10.1f} mean_pkt={row.mean_packet_bytes:6.1f} B "
              f"hash={row.raster_hash}")
    _emit(rep, cfg.out, cfg.format)
    if rep.failed:
        print(f"sweep aborted: {rep.failed}", file=sys.stderr)
        return EXIT_RUN
    if not rep.hashes_agree:
        print("raster hashes differ across rank counts", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def cmd_energy(args) -> int:
    series = ins.read_power_log(args.power_log)
    if args.events is not None:
        events = args.events
        report = None
    else:
        report = load_report(args.report)
        if not isinstance(report, RunReport):
            raise ConfigError("energy analysis needs a single-run report")
        events = report.synaptic_events
    er = ins.energy_report(series, events, args.t0, args.t1, args.baseline_watts)
    print(f"time={er.wall_seconds:.3f} s energy={er.joules:.3f} J power={er.mean_watts:.3f} W "
          f"events={er.synaptic_events} cost={er.microjoules_per_event:.4f} uJ/event")
    if report is not None:
        report.energy = er.to_dict()
        if args.out:
            _emit(report, args.out, args.format or "json")
    elif args.out:
        Path(args.out).write_text(json.dumps(er.to_dict(), indent=2, sort_keys=True))
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    report = load_report(args.input)
    _emit(report, args.out, args.format or "json")
    return EXIT_OK


def cmd_tune(args) -> int:
    from .tuning import tune_external_weight

    args.ranks = None
    cfg = build_config(args)
    w, trail = tune_external_weight(cfg, args.target_hz, args.lo, args.hi)
    for st in trail:
        print(f"external weight {st.weight:.5f} mV -> {st.rate_hz:.3f} Hz")
    print(f"tuned external weight: {w}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minidpsnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation")
    _common(p, "number of ranks", int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="strong-scaling sweep over rank counts")
    _common(p, "comma-separated ascending rank counts (default 1,2,4,8)", _rank_list)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("energy", help="offline energy-to-solution from a power log")
    p.add_argument("--power-log", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--report", help="JSON report of the run the log belongs to")
    src.add_argument("--events", type=int, help="synaptic event count, instead of a report")
    p.add_argument("--t0", type=float)
    p.add_argument("--t1", type=float)
    p.add_argument("--baseline-watts", type=float, default=0.0)
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"])
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("report", help="re-emit a stored JSON report")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"])
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("tune", help="calibrate the external weight to a target rate")
    _common(p, "number of ranks", int)
    p.add_argument("--target-hz", type=float, default=5.0)
    p.add_argument("--lo", type=float, default=0.40)
    p.add_argument("--hi", type=float, default=0.65)
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TopologyError, DynamicsError, ins.InstrumentationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
