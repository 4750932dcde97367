"""Run configuration: sectioned ``key = value`` files plus CLI overrides.

Example::

    [grid]
    grid_x = 4
    grid_y = 4
    neurons_per_column = 1250

    [neuron]
    g_c = 0.02

    [stimulus]
    rate = 3.0

    [run]
    ranks = 4
    sim_seconds = 1.0
    seed = 7

    [exchange]
    mode = broker
    send = collective
    ranks_per_node = 2
    backend = loopback
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace

from ..dynamics import ExternalStimulus, LifcaParams
from ..exchange.engine import ROUTE_MODES, SEND_MODES
from ..topology import GridConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    neuron: LifcaParams = field(default_factory=LifcaParams)
    stimulus: ExternalStimulus = field(default_factory=ExternalStimulus)
    n_ranks: int = 1
    ranks_per_node: int | None = None
    route_mode: str = "flat"
    send_mode: str = "collective"
    backend: str = "loopback"
    sim_seconds: float = 1.0
    seed: int = 12345
    out: str | None = None
    format: str = "json"
    power_log: str | None = None

    def __post_init__(self):
        # one seed drives both connectivity and the external drive
        if self.grid.seed != self.seed:
            object.__setattr__(self, "grid", replace(self.grid, seed=self.seed))

    @property
    def n_steps(self) -> int:
        return int(round(self.sim_seconds * 1000.0 / self.neuron.dt))

    def validate(self) -> None:
        self.grid.validate()
        self.neuron.validate()
        self.stimulus.validate()
        if self.sim_seconds <= 0:
            raise ConfigError("sim_seconds must be positive")
        if self.n_ranks < 1:
            raise ConfigError("n_ranks must be >= 1")
        if self.ranks_per_node is not None and self.ranks_per_node < 1:
            raise ConfigError("ranks_per_node must be >= 1")
        if self.route_mode not in ROUTE_MODES:
            raise ConfigError(f"mode must be one of {ROUTE_MODES}")
        if self.send_mode not in SEND_MODES:
            raise ConfigError(f"send must be one of {SEND_MODES}")
        if self.backend not in ("loopback", "socket"):
            raise ConfigError("backend must be loopback or socket")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        grid = dict(d.pop("grid", {}))
        if "delay_range" in grid:
            grid["delay_range"] = tuple(grid["delay_range"])
        return cls(
            grid=GridConfig(**grid),
            neuron=LifcaParams(**d.pop("neuron", {})),
            stimulus=ExternalStimulus(**d.pop("stimulus", {})),
            **d,
        )


# section -> {key: (target, field name)}; target None means a RunConfig field
_RUN_KEYS = {
    "ranks": "n_ranks",
    "n_ranks": "n_ranks",
    "sim_seconds": "sim_seconds",
    "seed": "seed",
    "out": "out",
    "format": "format",
    "power_log": "power_log",
    "mode": "route_mode",
    "send": "send_mode",
    "ranks_per_node": "ranks_per_node",
    "backend": "backend",
}


def _coerce(cls, name: str, raw: str):
    ftype = {f.name: f.type for f in fields(cls)}[name]
    ftype = str(ftype)
    if name == "delay_range":
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(int(p) for p in parts)
    if ftype.startswith("int | None"):
        return None if raw.lower() in ("", "none") else int(raw)
    if ftype.startswith("str | None"):
        return None if raw.lower() in ("", "none") else raw
    if ftype.startswith("int"):
        return int(raw, 0)
    if ftype.startswith("float"):
        return float(raw)
    return raw


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(text)
    cfg = base or RunConfig()
    grid, neuron, stim, run = {}, {}, {}, {}
    targets = {"grid": (GridConfig, grid), "neuron": (LifcaParams, neuron), "stimulus": (ExternalStimulus, stim)}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if section in targets:
                cls, bucket = targets[section]
                if key not in {f.name for f in fields(cls)}:
                    raise ConfigError(f"unknown key [{section}] {key}")
                bucket[key] = _coerce(cls, key, raw)
            elif section in ("run", "exchange", "output"):
                if key not in _RUN_KEYS:
                    raise ConfigError(f"unknown key [{section}] {key}")
                name = _RUN_KEYS[key]
                run[name] = _coerce(RunConfig, name, raw)
            else:
                raise ConfigError(f"unknown section [{section}]")
    if "seed" in grid and "seed" not in run:
        run["seed"] = grid["seed"]
    grid.pop("seed", None)
    seed = run.get("seed", cfg.seed)
    return replace(
        cfg,
        grid=replace(cfg.grid, seed=seed, **grid),
        neuron=replace(cfg.neuron, **neuron),
        stimulus=replace(cfg.stimulus, **stim),
        **run,
    )


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def energy_config(**overrides) -> RunConfig:
    """10 K neurons, ~1195 internal + 594 external synapses each, 3 s at 3 Hz drive."""
    grid = GridConfig(grid_x=4, grid_y=2, neurons_per_column=1250, out_degree_exc=1244, out_degree_inh=1000)
    kw = dict(grid=grid, sim_seconds=3.0)
    kw.update(overrides)
    return RunConfig(**kw)
