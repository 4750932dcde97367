"""Run and sweep reports: JSON/CSV serialization and plot-data tables."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..instrumentation import PHASES


@dataclass
class RunReport:
    config: dict
    wall_seconds: float
    simulated_seconds: float
    n_neurons: int
    n_synapses: int
    spike_count: int
    mean_rate_hz: float
    synaptic_events: int
    internal_events: int
    external_events: int
    phases: dict
    traffic: dict
    raster_hash: str
    inter_node_streams_per_step: float = 0.0
    broker_phases: dict | None = None
    energy: dict | None = None

    @property
    def n_ranks(self) -> int:
        return int(self.config["n_ranks"])

    @property
    def realtime_ratio(self) -> float:
        return self.wall_seconds / self.simulated_seconds

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def flat_row(self) -> dict:
        traffic = self.traffic
        row = {
            "n_ranks": self.n_ranks,
            "wall_seconds": self.wall_seconds,
            "simulated_seconds": self.simulated_seconds,
            "realtime_ratio": self.realtime_ratio,
            "n_neurons": self.n_neurons,
            "spike_count": self.spike_count,
            "mean_rate_hz": self.mean_rate_hz,
            "synaptic_events": self.synaptic_events,
            "packets": traffic["packets"],
            "wire_bytes": traffic["wire_bytes"],
            "payload_bytes": traffic["payload_bytes"],
            "max_packet_bytes": traffic["max_packet_bytes"],
            "mean_packet_bytes": traffic["mean_packet_bytes"],
            "raster_hash": self.raster_hash,
        }
        for p in PHASES:
            row[f"{p}_fraction"] = self.phases["fractions"][p]
        row["residual_fraction"] = self.phases["residual"]
        if self.energy:
            row.update({f"energy_{k}": v for k, v in self.energy.items()})
        return row


def _per_rank_traffic(report: RunReport) -> tuple[float, float]:
    """Mean packets and payload bytes per compute rank."""
    per = {int(k): v for k, v in report.traffic["per_rank"].items()}
    ranks = range(report.n_ranks)
    packets = sum(per.get(r, {}).get("packets", 0) for r in ranks) / report.n_ranks
    payload = sum(per.get(r, {}).get("payload_bytes", 0) for r in ranks) / report.n_ranks
    return packets, payload


@dataclass
class ScalingRow:
    n_ranks: int
    wall_seconds: float
    simulated_seconds: float
    spike_count: int
    mean_rate_hz: float
    synaptic_events: int
    raster_hash: str
    phase_seconds: dict
    packets_per_rank: float
    payload_per_rank: float
    wire_bytes: int
    packets: int
    max_packet_bytes: int
    mean_packet_bytes: float
    speedup: float = 1.0

    @classmethod
    def from_report(cls, n_ranks: int, rep: RunReport) -> "ScalingRow":
        packets, payload = _per_rank_traffic(rep)
        # mean seconds per rank in each phase
        phase_seconds = {p: rep.phases["seconds"][p] / n_ranks for p in PHASES}
        return cls(
            n_ranks=n_ranks,
            wall_seconds=rep.wall_seconds,
            simulated_seconds=rep.simulated_seconds,
            spike_count=rep.spike_count,
            mean_rate_hz=rep.mean_rate_hz,
            synaptic_events=rep.synaptic_events,
            raster_hash=rep.raster_hash,
            phase_seconds=phase_seconds,
            packets_per_rank=packets,
            payload_per_rank=payload,
            wire_bytes=rep.traffic["wire_bytes"],
            packets=rep.traffic["packets"],
            max_packet_bytes=rep.traffic["max_packet_bytes"],
            mean_packet_bytes=rep.traffic["mean_packet_bytes"],
        )


@dataclass
class ScalingReport:
    config: dict
    rows: list[ScalingRow]
    failed: str | None = None
    hashes_agree: bool = True

    @classmethod
    def build(cls, config: dict, rows: list[ScalingRow], failed: str | None = None) -> "ScalingReport":
        if rows:
            base = rows[0].wall_seconds
            for r in rows:
                r.speedup = base / r.wall_seconds if r.wall_seconds > 0 else float("nan")
        agree = len({r.raster_hash for r in rows}) <= 1
        return cls(config, rows, failed, agree)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingReport":
        rows = [ScalingRow(**r) for r in d["rows"]]
        return cls(d["config"], rows, d.get("failed"), d.get("hashes_agree", True))


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _scaling_flat(row: ScalingRow) -> dict:
    d = {k: v for k, v in asdict(row).items() if k != "phase_seconds"}
    d.update({f"{p}_seconds": s for p, s in row.phase_seconds.items()})
    return d


def plot_tables(report: RunReport | ScalingReport) -> dict[str, list[dict]]:
    """Plot-ready tables: scaling curve, phase stack, packet stats, energy bars."""
    if isinstance(report, RunReport):
        rows = [ScalingRow.from_report(report.n_ranks, report)]
        energy = [report.energy] if report.energy else []
    else:
        rows = report.rows
        energy = []
    scaling = [{"n_ranks": r.n_ranks, "wall_seconds": r.wall_seconds,
                "wall_per_simulated_second": r.wall_seconds / r.simulated_seconds,
                "speedup": r.speedup} for r in rows]
    phase = []
    for r in rows:
        d = {"n_ranks": r.n_ranks}
        d.update({f"{p}_seconds": r.phase_seconds[p] for p in PHASES})
        d["residual_seconds"] = r.wall_seconds - sum(r.phase_seconds.values())
        d["wall_seconds"] = r.wall_seconds
        phase.append(d)
    packets = [{"n_ranks": r.n_ranks, "packets_per_rank": r.packets_per_rank,
                "payload_bytes_per_rank": r.payload_per_rank, "max_packet_bytes": r.max_packet_bytes,
                "mean_packet_bytes": r.mean_packet_bytes} for r in rows]
    bars = [{"label": "run", **e} for e in energy]
    return {"scaling_curve": scaling, "phase_stack": phase, "packet_stats": packets, "energy_bars": bars}


def emit_report(report: RunReport | ScalingReport, fmt: str, path) -> list[Path]:
    """Write ``report`` as JSON (full) or CSV (flat rows) plus plot-data CSVs beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = [path]
    if fmt == "json":
        with open(path, "w") as fh:
            kind = "run" if isinstance(report, RunReport) else "scaling"
            json.dump({"kind": kind, **report.to_dict()}, fh, indent=2, sort_keys=True)
    elif fmt == "csv":
        if isinstance(report, RunReport):
            _write_csv(path, [report.flat_row()])
        else:
            _write_csv(path, [_scaling_flat(r) for r in report.rows])
    else:
        raise ValueError(f"unknown format {fmt!r}")
    stem = path.with_suffix("")
    for name, rows in plot_tables(report).items():
        if rows:
            p = Path(f"{stem}.{name}.csv")
            _write_csv(p, rows)
            written.append(p)
    return written


def load_report(path) -> RunReport | ScalingReport:
    with open(path) as fh:
        d = json.load(fh)
    kind = d.pop("kind", "run")
    return ScalingReport.from_dict(d) if kind == "scaling" else RunReport.from_dict(d)
