"""TOML experiment configuration for the command-line tools.

A config names either real input files under ``[data]`` or a synthetic
generation block ``[data.synthetic]``, a year split, a list of model specs,
fleet/shift/policy settings, and the simulation and sweep parameters.  Paths
are resolved relative to the config file.
"""

from __future__ import annotations

import datetime as dt
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import Shift
from .forecast import Family, ModelSpec
from .relocation import PolicyParams


class ConfigError(ValueError):
    pass


def parse_shift(text: str) -> Shift:
    """Parse "HH:MM-HH:MM" into a Shift."""
    try:
        start_s, end_s = text.split("-")
        def secs(part):
            h, m = part.strip().split(":")
            return int(h) * 3600 + int(m) * 60
        return Shift(secs(start_s), secs(end_s))
    except (ValueError, AttributeError) as exc:
        raise ConfigError(f"bad shift {text!r} (expected HH:MM-HH:MM)") from exc


@dataclass
class SynthBlock:
    n_stations: int
    start: dt.date
    end: dt.date
    seed: int
    events_per_station_day: float = 16.0


@dataclass
class ShiftGroup:
    shift: Shift
    count: int


@dataclass
class FleetConfig:
    vehicle_capacity: int = 14
    weekday: list[ShiftGroup] = field(default_factory=list)
    saturday: list[ShiftGroup] = field(default_factory=list)


@dataclass
class ModelEntry:
    """A forecaster to run: an internal spec or an external forecast.csv."""

    name: str
    spec: ModelSpec | None = None
    external_path: Path | None = None


@dataclass
class SimulateBlock:
    days: str = "test"
    include_perfect: bool = True
    include_zero_vehicle: bool = True
    baseline: str = "reference_day"
    max_days: int | None = None
    per_slot_series: bool = False


@dataclass
class SweepBlock:
    max_fleet: int = 3
    morning: Shift = field(default_factory=lambda: parse_shift("07:00-15:00"))
    afternoon: Shift = field(default_factory=lambda: parse_shift("11:30-19:30"))
    saturday_morning: Shift = field(default_factory=lambda: parse_shift("07:00-13:00"))
    models: list[str] | None = None  # None = every configured model
    days: str = "test"
    max_days: int | None = 30


@dataclass
class ExperimentConfig:
    base_dir: Path
    seed: int
    out_dir: Path
    paths: dict[str, Path]
    synthetic: SynthBlock | None
    split: dict[int, str]
    models: list[ModelEntry]
    reference_fill: bool
    policy: PolicyParams
    fleet: FleetConfig
    simulate: SimulateBlock
    sweep: SweepBlock

    def validate(self) -> list[str]:
        problems = []
        if self.synthetic is None:
            for key, path in self.paths.items():
                if not path.exists():
                    problems.append(f"[data] {key}: no such file {path}")
        else:
            if self.synthetic.n_stations < 1:
                problems.append("[data.synthetic] n_stations must be >= 1")
            if self.synthetic.end < self.synthetic.start:
                problems.append("[data.synthetic] end precedes start")
        if not self.models:
            problems.append("at least one [[models]] entry is required")
        names = [entry.name for entry in self.models]
        for name in sorted({n for n in names if names.count(n) > 1}):
            problems.append(f"duplicate model name {name!r}; set distinct 'name' keys")
        for entry in self.models:
            if entry.external_path is not None and not entry.external_path.exists():
                problems.append(f"model {entry.name}: no such forecast file {entry.external_path}")
        if self.sweep.max_fleet < 0:
            problems.append("[sweep] max_fleet must be >= 0")
        roles = set(self.split.values())
        if self.split and not roles <= {"train", "validation", "test", "unused"}:
            problems.append(f"[split] unknown roles: {sorted(roles)}")
        return problems


_DATA_KEYS = ("layout", "graph_time", "graph_dist", "trips", "weather", "calendar")


def _model_entry(raw: dict, index: int) -> ModelEntry:
    family = raw.get("family")
    if family == "external":
        path = raw.get("path")
        if not path:
            raise ConfigError(f"models[{index}]: external model needs a path")
        name = raw.get("name", f"external-{Path(path).stem}")
        return ModelEntry(name=name, external_path=Path(path))
    try:
        spec = ModelSpec(
            family=Family(family),
            approach=raw.get("approach", "global"),
            hyperparameters=dict(raw.get("hyperparameters", {})),
        )
    except ValueError as exc:
        raise ConfigError(f"models[{index}]: {exc}") from exc
    return ModelEntry(name=raw.get("name", spec.name), spec=spec)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    data = raw.get("data", {})
    synthetic = None
    if "synthetic" in data:
        s = data["synthetic"]
        try:
            synthetic = SynthBlock(
                n_stations=int(s["n_stations"]),
                start=s["start"] if isinstance(s["start"], dt.date) else dt.date.fromisoformat(s["start"]),
                end=s["end"] if isinstance(s["end"], dt.date) else dt.date.fromisoformat(s["end"]),
                seed=int(s.get("seed", raw.get("seed", 0))),
                events_per_station_day=float(s.get("events_per_station_day", 16.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"[data.synthetic] missing key {exc}") from exc
    out_dir = resolve(raw.get("out_dir", "out"))
    if synthetic is not None:
        paths = {key: out_dir / "data" / f"{key}.csv" for key in _DATA_KEYS}
    else:
        missing = [k for k in _DATA_KEYS if k not in data]
        if missing:
            raise ConfigError(f"[data] missing keys: {missing} (or provide [data.synthetic])")
        paths = {key: resolve(data[key]) for key in _DATA_KEYS}

    split = {}
    for year, role in raw.get("split", {}).items():
        try:
            split[int(year)] = str(role)
        except ValueError as exc:
            raise ConfigError(f"[split] bad year {year!r}") from exc

    models = [_model_entry(m, i) for i, m in enumerate(raw.get("models", []))]
    for entry in models:
        if entry.external_path is not None and not entry.external_path.is_absolute():
            entry.external_path = base / entry.external_path

    pol = raw.get("policy", {})
    policy = PolicyParams(
        lookahead_slots=int(pol.get("lookahead_slots", 4)),
        deadband_bikes=int(pol.get("deadband_bikes", 2)),
        per_bike_service_s=float(pol.get("per_bike_service_s", 30.0)),
    )

    fl = raw.get("fleet", {})
    def groups(entries):
        return [ShiftGroup(parse_shift(e["shift"]), int(e.get("count", 1))) for e in entries]
    fleet = FleetConfig(
        vehicle_capacity=int(fl.get("vehicle_capacity", 14)),
        weekday=groups(fl.get("weekday", [{"shift": "07:00-15:00", "count": 2},
                                          {"shift": "11:30-19:30", "count": 1}])),
        saturday=groups(fl.get("saturday", [{"shift": "07:00-13:00", "count": 1}])),
    )

    sim_raw = raw.get("simulate", {})
    simulate = SimulateBlock(
        days=sim_raw.get("days", "test"),
        include_perfect=bool(sim_raw.get("include_perfect", True)),
        include_zero_vehicle=bool(sim_raw.get("include_zero_vehicle", True)),
        baseline=sim_raw.get("baseline", "reference_day"),
        max_days=int(sim_raw["max_days"]) if "max_days" in sim_raw else None,
        per_slot_series=bool(sim_raw.get("per_slot_series", False)),
    )

    sw = raw.get("sweep", {})
    if "models" in sw:
        sweep_models = [str(m) for m in sw["models"]]
    elif "model" in sw:
        sweep_models = [str(sw["model"])]
    else:
        sweep_models = None
    sweep = SweepBlock(
        max_fleet=int(sw.get("max_fleet", 3)),
        morning=parse_shift(sw.get("morning", "07:00-15:00")),
        afternoon=parse_shift(sw.get("afternoon", "11:30-19:30")),
        saturday_morning=parse_shift(sw.get("saturday_morning", "07:00-13:00")),
        models=sweep_models,
        days=sw.get("days", "test"),
        max_days=int(sw["max_days"]) if "max_days" in sw else 30,
    )

    return ExperimentConfig(
        base_dir=base,
        seed=int(raw.get("seed", 0)),
        out_dir=out_dir,
        paths=paths,
        synthetic=synthetic,
        split=split,
        models=models,
        reference_fill=bool(raw.get("reference_fill", True)),
        policy=policy,
        fleet=fleet,
        simulate=simulate,
        sweep=sweep,
    )
