"""Domain types shared by every module, plus half-hour time indexing.

Stations are identified by dense integer ids in ``[0, N)``; the depot is the
virtual node ``N`` in the travel graph.  A half-hour index counts slots since
the dataset epoch (midnight of the first calendar day), so ``index // 48`` is
the day offset and ``index % 48`` the slot of day.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

SLOT_SECONDS = 1800
SLOTS_PER_DAY = 48
DAY_SECONDS = 86400

# 52 weeks implemented as exactly 364 days of half-hour slots.
LAG_52_WEEKS = 364 * SLOTS_PER_DAY

StationId = int


def hh_index(timestamp: dt.datetime, epoch: dt.date) -> int:
    """Half-hour index of ``timestamp`` relative to midnight of ``epoch``."""
    days = (timestamp.date() - epoch).days
    if days < 0:
        raise ValueError(f"pre-epoch timestamp: {timestamp} before {epoch}")
    seconds = timestamp.hour * 3600 + timestamp.minute * 60 + timestamp.second
    return SLOTS_PER_DAY * days + seconds // SLOT_SECONDS


def slot_of_day(h: int) -> int:
    """Slot of day in [0, 48) for a half-hour index."""
    return h % SLOTS_PER_DAY


def day_offset(h: int) -> int:
    """Day offset since epoch for a half-hour index."""
    return h // SLOTS_PER_DAY


def slot_start(h: int, epoch: dt.date) -> dt.datetime:
    """Datetime at which slot ``h`` begins (inverse of :func:`hh_index`)."""
    date = epoch + dt.timedelta(days=day_offset(h))
    secs = slot_of_day(h) * SLOT_SECONDS
    return dt.datetime.combine(date, dt.time(secs // 3600, (secs % 3600) // 60))


@dataclass(frozen=True)
class Station:
    """A docked station.  Position in planar meters, elevation informational."""

    id: StationId
    capacity: int
    initial_stock: int
    x_m: float = 0.0
    y_m: float = 0.0
    elevation_m: float = 0.0


@dataclass(frozen=True)
class TravelGraph:
    """Pairwise travel time (s) and distance (m) matrices, depot at index N."""

    travel_time: np.ndarray
    distance: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "travel_time", np.asarray(self.travel_time, dtype=float))
        object.__setattr__(self, "distance", np.asarray(self.distance, dtype=float))


@dataclass(frozen=True)
class Layout:
    stations: list[Station]
    graph: TravelGraph

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def depot(self) -> int:
        """Index of the virtual depot node in the travel graph."""
        return len(self.stations)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([s.capacity for s in self.stations], dtype=np.int64)

    @property
    def initial_stocks(self) -> np.ndarray:
        return np.array([s.initial_stock for s in self.stations], dtype=np.int64)


def validate_layout(layout: Layout) -> list[str]:
    """Return every violated invariant; an empty list means the layout is valid."""
    problems: list[str] = []
    n = layout.n_stations
    for pos, station in enumerate(layout.stations):
        if station.id != pos:
            problems.append(f"station id {station.id} at position {pos} is not dense")
        if station.capacity < 1:
            problems.append(f"capacity < 1 at station {station.id}")
        if station.initial_stock < 0:
            problems.append(f"negative stock at station {station.id}")
        elif station.initial_stock > station.capacity:
            problems.append(f"stock exceeds capacity at station {station.id}")
    for name, mat in (("travel_time", layout.graph.travel_time), ("distance", layout.graph.distance)):
        if mat.shape != (n + 1, n + 1):
            problems.append(f"graph dimension: {name} is {mat.shape}, expected {(n + 1, n + 1)}")
            continue
        if np.any(np.diag(mat) != 0):
            problems.append(f"{name} diagonal is not zero")
        if np.any(mat < 0):
            problems.append(f"negative entries in {name}")
    return problems


@dataclass(frozen=True)
class Shift:
    """Vehicle work shift in seconds from midnight."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end <= DAY_SECONDS):
            raise ValueError(f"invalid shift [{self.start}, {self.end}]")


@dataclass(frozen=True)
class Vehicle:
    """A relocation vehicle.  ``start_station`` of None means the depot."""

    id: int
    capacity: int
    shift: Shift
    start_station: StationId | None = None

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"vehicle {self.id} capacity must be >= 1")


@dataclass(frozen=True)
class Fleet:
    vehicles: list[Vehicle]

    def __len__(self) -> int:
        return len(self.vehicles)


@dataclass(frozen=True)
class DayContext:
    """Calendar and day-level weather attributes of one simulated/observed day.

    ``week_index`` is the progressive week count from the dataset epoch;
    weather flags hold for the whole day (all 48 slots).
    """

    date: dt.date
    week_index: int
    is_public_holiday: bool = False
    is_school_day: bool = True
    avg_temperature: float = 15.0
    avg_wind_speed: float = 5.0
    fog: bool = False
    rain: bool = False
    snow: bool = False
    storm: bool = False

    @property
    def day_of_week(self) -> int:
        """0 = Monday .. 6 = Sunday."""
        return self.date.weekday()

    @property
    def day_of_month(self) -> int:
        return self.date.day

    @property
    def month(self) -> int:
        return self.date.month

    @property
    def is_sunday(self) -> bool:
        return self.day_of_week == 6

    @property
    def day_type(self) -> int:
        return day_type(self.day_of_week)

    @classmethod
    def build(cls, date: dt.date, epoch: dt.date, **kwargs) -> "DayContext":
        """Construct with ``week_index`` derived from the dataset epoch."""
        return cls(date=date, week_index=(date - epoch).days // 7, **kwargs)


WORKING, SATURDAY, SUNDAY = 0, 1, 2


def day_type(day_of_week: int) -> int:
    """Classify a weekday code (0=Mon..6=Sun) as working day, Saturday, or Sunday."""
    if day_of_week == 5:
        return SATURDAY
    if day_of_week == 6:
        return SUNDAY
    return WORKING


# Feature schema.  Order is fixed; tree models split categorical features on
# category sets, so integer codes carry no ordinal meaning.
LOCAL_FEATURES: tuple[str, ...] = (
    "slot_of_day",
    "day_of_month",
    "day_of_week",
    "month",
    "week_index",
    "avg_temperature",
    "avg_wind_speed",
    "public_holiday",
    "school_day",
    "fog",
    "rain",
    "snow",
    "storm",
)
# The global approach adds the station id after week_index.
GLOBAL_FEATURES: tuple[str, ...] = LOCAL_FEATURES[:5] + ("station",) + LOCAL_FEATURES[5:]
CATEGORICAL_FEATURES = frozenset({"slot_of_day", "day_of_month", "day_of_week", "month", "station"})


def feature_names(approach: str) -> tuple[str, ...]:
    if approach == "global":
        return GLOBAL_FEATURES
    if approach == "local":
        return LOCAL_FEATURES
    raise ValueError(f"unknown approach {approach!r}")


def categorical_mask(names: tuple[str, ...]) -> np.ndarray:
    return np.array([name in CATEGORICAL_FEATURES for name in names], dtype=bool)


def day_feature_block(ctx: DayContext, station: StationId | None = None) -> np.ndarray:
    """Feature rows for the 48 slots of one day, in schema order.

    With ``station`` given the rows follow the global schema, otherwise the
    local one.
    """
    slots = np.arange(SLOTS_PER_DAY, dtype=float)
    day_part = [
        float(ctx.day_of_month),
        float(ctx.day_of_week),
        float(ctx.month),
        float(ctx.week_index),
    ]
    if station is not None:
        day_part.append(float(station))
    day_part += [
        float(ctx.avg_temperature),
        float(ctx.avg_wind_speed),
        float(ctx.is_public_holiday),
        float(ctx.is_school_day),
        float(ctx.fog),
        float(ctx.rain),
        float(ctx.snow),
        float(ctx.storm),
    ]
    block = np.empty((SLOTS_PER_DAY, 1 + len(day_part)))
    block[:, 0] = slots
    block[:, 1:] = day_part
    return block
