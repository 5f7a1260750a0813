"""Experiment configuration: JSON file -> nested dataclasses, with field-level diagnostics.

Schema (every section optional except ``spec``)::

    {
      "spec":    {"name": <catalog entry>, "params": {...}},
      "time":    {"t0": 0.0, "T": 1.0, "steps": 100},
      "x0": 0.0,
      "controls": {"u": 0, "v": 0},
      "lattice": {"kind": "trinomial", "span": 3.0, "dx": null, "half_width": null},
      "space":   {"x_min": -4.0, "x_max": 4.0, "dx": 0.05, "steps": null},
      "solver":  {"degree": 3, "paths": 10000, "penalties": [10, 100, 1000], "methods": [...]},
      "game":    {"j": 1, "mode": "minus", "splits": [..] | null, "num_splits": 5, "lsmc": false},
      "isaacs":  {"samples": 10000, "points": [{"t":..,"x":..,"y":..,"p":..,"A":..}], "coincidence": true},
      "nash":    {"eps": 0.05, "stride": 2, "chattering": 1, "cell_nodes": null, "ladder": [...],
                  "deviations": 100, "eps0": 0.01, "eps1": 0.01, "constant_candidate": null,
                  "envelope": false, "envelope_tol": 0.1},
      "proptest": {"pairs": 20},
      "seed": 0,
      "output": "out"
    }
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .catalog import CATALOG, build_spec
from .sde_core import GameSpec, SpecError, TimeGrid


class ConfigError(ValueError):
    pass


@dataclass
class SpecConfig:
    name: str = ""
    params: dict = field(default_factory=dict)


@dataclass
class TimeConfig:
    t0: float = 0.0
    T: float = 1.0
    steps: int = 100


@dataclass
class ControlsConfig:
    u: int = 0
    v: int = 0


@dataclass
class LatticeConfig:
    kind: str = "trinomial"  # or "binomial" (constant-coefficient specs)
    span: float = 3.0
    dx: Optional[float] = None
    half_width: Optional[int] = None


@dataclass
class SpaceConfig:
    x_min: float = -4.0
    x_max: float = 4.0
    dx: float = 0.05
    steps: Optional[int] = None  # PDE time steps; default: finest uniform grid meeting CFL


@dataclass
class SolverConfig:
    degree: int = 3
    paths: int = 10_000
    penalties: list = field(default_factory=lambda: [10.0, 100.0, 1000.0])
    methods: list = field(default_factory=lambda: ["tree", "lsmc", "penalized"])


@dataclass
class GameConfig:
    j: int = 1
    mode: str = "minus"
    splits: Optional[list] = None
    num_splits: int = 5
    lsmc: bool = False


@dataclass
class IsaacsConfig:
    samples: int = 10_000
    points: list = field(default_factory=list)
    coincidence: bool = True


@dataclass
class NashConfig:
    eps: float = 0.05
    stride: int = 2
    chattering: int = 1
    cell_nodes: Optional[int] = None
    ladder: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    deviations: int = 100
    eps0: float = 0.01
    eps1: float = 0.01
    constant_candidate: Optional[list] = None
    envelope: bool = False
    envelope_tol: float = 0.1


@dataclass
class ProptestConfig:
    pairs: int = 20


@dataclass
class ExperimentConfig:
    spec: SpecConfig
    time: TimeConfig = field(default_factory=TimeConfig)
    x0: float = 0.0
    controls: ControlsConfig = field(default_factory=ControlsConfig)
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    space: SpaceConfig = field(default_factory=SpaceConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    game: GameConfig = field(default_factory=GameConfig)
    isaacs: IsaacsConfig = field(default_factory=IsaacsConfig)
    nash: NashConfig = field(default_factory=NashConfig)
    proptest: ProptestConfig = field(default_factory=ProptestConfig)
    seed: int = 0
    output: str = "out"
    source: Optional[str] = None

    def build_spec(self) -> GameSpec:
        return build_spec(self.spec.name, **self.spec.params)

    def time_grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.time.t0, self.time.T, self.time.steps)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("source")
        return d


_SECTIONS = {
    "spec": SpecConfig, "time": TimeConfig, "controls": ControlsConfig, "lattice": LatticeConfig,
    "space": SpaceConfig, "solver": SolverConfig, "game": GameConfig, "isaacs": IsaacsConfig,
    "nash": NashConfig, "proptest": ProptestConfig,
}
_SCALARS = {"x0": float, "seed": int, "output": str}

_POSITIVE = {
    "time.steps", "time.T", "lattice.span", "lattice.dx", "space.dx", "space.steps",
    "solver.degree", "solver.paths", "game.num_splits", "isaacs.samples", "nash.eps", "nash.stride",
    "nash.chattering", "nash.cell_nodes", "nash.eps0", "nash.eps1", "proptest.pairs",
}


_OPTIONAL_TYPES = {
    "lattice.dx": 0.0, "lattice.half_width": 0, "space.steps": 0, "game.splits": [],
    "nash.cell_nodes": 0, "nash.constant_candidate": [],
}


def _coerce(name: str, value, target):
    """Check ``value`` against the type of the dataclass default ``target``."""
    if target is None or value is None:
        return value
    if isinstance(target, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"field {name!r}: expected true/false, got {value!r}")
        return value
    if isinstance(target, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"field {name!r}: expected an integer, got {value!r}")
        return value
    if isinstance(target, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"field {name!r}: expected a number, got {value!r}")
        return float(value)
    if isinstance(target, str) and not isinstance(value, str):
        raise ConfigError(f"field {name!r}: expected a string, got {value!r}")
    if isinstance(target, (list, dict)) and not isinstance(value, type(target)):
        raise ConfigError(f"field {name!r}: expected a {type(target).__name__}, got {value!r}")
    return value


def _section(name: str, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"section {name!r}: unknown field(s) {sorted(unknown)}; allowed {sorted(fields)}")
    proto = cls()
    kwargs = {}
    for key, val in raw.items():
        full = f"{name}.{key}"
        default = getattr(proto, key)
        val = _coerce(full, val, _OPTIONAL_TYPES.get(full) if default is None else default)
        if full in _POSITIVE and val is not None and not val > 0:
            raise ConfigError(f"field {full!r}: must be positive, got {val!r}")
        kwargs[key] = val
    return cls(**kwargs)


def parse_config(raw: dict, source: Optional[str] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    allowed = set(_SECTIONS) | set(_SCALARS)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {sorted(unknown)}; allowed {sorted(allowed)}")
    if "spec" not in raw:
        raise ConfigError("missing required section 'spec'")
    kwargs = {name: _section(name, cls, raw[name]) for name, cls in _SECTIONS.items() if name in raw}
    for name, typ in _SCALARS.items():
        if name in raw:
            kwargs[name] = _coerce(name, raw[name], typ())
    cfg = ExperimentConfig(**kwargs, source=source)
    if cfg.spec.name not in CATALOG:
        raise ConfigError(f"field 'spec.name': unknown catalog entry {cfg.spec.name!r}; known {sorted(CATALOG)}")
    if cfg.lattice.kind not in ("trinomial", "binomial"):
        raise ConfigError("field 'lattice.kind': must be 'trinomial' or 'binomial'")
    if cfg.game.mode not in ("minus", "plus"):
        raise ConfigError("field 'game.mode': must be 'minus' or 'plus'")
    if cfg.game.j not in (1, 2):
        raise ConfigError("field 'game.j': must be 1 or 2")
    if cfg.space.x_max <= cfg.space.x_min:
        raise ConfigError("fields 'space.x_min'/'space.x_max': need x_min < x_max")
    if any(not (isinstance(e, (int, float)) and e > 0) for e in cfg.nash.ladder):
        raise ConfigError("field 'nash.ladder': entries must be positive numbers")
    if any(not (isinstance(e, (int, float)) and e >= 0) for e in cfg.solver.penalties):
        raise ConfigError("field 'solver.penalties': entries must be nonnegative numbers")
    try:
        cfg.build_spec()
    except SpecError as exc:
        raise ConfigError(f"field 'spec.params': {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"field 'spec.params': {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw, str(path))
