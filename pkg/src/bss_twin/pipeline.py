"""Trip-log ingestion and half-hour aggregation into net-demand datasets.

File formats (CSV, ISO-8601 local timestamps, integer ids):

* ``trips.csv``     header ``withdrawal_time,origin,return_time,destination``
* ``weather.csv``   header ``date,avg_temp_c,avg_wind_kmh,fog,rain,snow,storm``
* ``calendar.csv``  header ``date,public_holiday,school_day``
* ``layout.csv``    header ``id,capacity,initial_stock,x_m,y_m,elevation_m``
* graph files       square (N+1)x(N+1) matrices, row-major, depot last; row
  order follows ``layout.csv`` row order.

Raw station ids are remapped to the dense range [0, N) by their row position
in ``layout.csv``.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import (
    SLOTS_PER_DAY,
    DayContext,
    Layout,
    Station,
    TravelGraph,
    day_feature_block,
    feature_names,
    hh_index,
)

ROLES = ("train", "validation", "test", "unused")


class PipelineError(ValueError):
    """Raised for unrecoverable input problems (unknown station, missing day)."""


@dataclass(frozen=True)
class TripRecord:
    withdrawal_time: dt.datetime
    origin: int
    return_time: dt.datetime
    destination: int

    def __post_init__(self) -> None:
        if self.return_time < self.withdrawal_time:
            raise ValueError("return before withdrawal")


@dataclass
class IngestReport:
    trips: list[TripRecord]
    rejected: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)


def _parse_ts(text: str) -> dt.datetime:
    return dt.datetime.fromisoformat(text.strip())


def ingest_trip_log(path, id_map: dict[int, int] | None = None) -> IngestReport:
    """Parse a trip log, remapping raw station ids through ``id_map``.

    Malformed rows (bad fields, return before withdrawal) are rejected and
    reported with their line number; an unknown station id is an error.
    """
    report = IngestReport(trips=[])
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return report
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                report.rejected.append((line_no, f"expected 4 fields, got {len(row)}"))
                continue
            try:
                w_time = _parse_ts(row[0])
                origin = int(row[1])
                r_time = _parse_ts(row[2])
                destination = int(row[3])
            except ValueError as exc:
                report.rejected.append((line_no, f"unparseable row: {exc}"))
                continue
            if id_map is not None:
                if origin not in id_map:
                    raise PipelineError(f"line {line_no}: unknown station id {origin}")
                if destination not in id_map:
                    raise PipelineError(f"line {line_no}: unknown station id {destination}")
                origin, destination = id_map[origin], id_map[destination]
            if r_time < w_time:
                report.rejected.append((line_no, "return before withdrawal"))
                continue
            report.trips.append(TripRecord(w_time, origin, r_time, destination))
    return report


def load_layout(layout_path, time_path, dist_path) -> tuple[Layout, dict[int, int]]:
    """Load layout + graph files; returns the layout and the raw->dense id map."""
    stations: list[Station] = []
    id_map: dict[int, int] = {}
    with open(layout_path, newline="") as fh:
        for pos, row in enumerate(csv.DictReader(fh)):
            raw_id = int(row["id"])
            if raw_id in id_map:
                raise PipelineError(f"duplicate station id {raw_id} in layout")
            id_map[raw_id] = pos
            stations.append(
                Station(
                    id=pos,
                    capacity=int(row["capacity"]),
                    initial_stock=int(row["initial_stock"]),
                    x_m=float(row["x_m"]),
                    y_m=float(row["y_m"]),
                    elevation_m=float(row["elevation_m"]),
                )
            )
    time_mat = np.loadtxt(time_path, delimiter=",", ndmin=2)
    dist_mat = np.loadtxt(dist_path, delimiter=",", ndmin=2)
    return Layout(stations=stations, graph=TravelGraph(time_mat, dist_mat)), id_map


def _read_flag(value: str) -> bool:
    return bool(int(value))


def load_day_contexts(weather_path, calendar_path, epoch: dt.date | None = None) -> list[DayContext]:
    """Join weather and calendar files into per-day contexts, sorted by date.

    The epoch (for week_index) defaults to the first weather date.  Every
    weather date must appear in the calendar file.
    """
    weather: dict[dt.date, dict] = {}
    with open(weather_path, newline="") as fh:
        for row in csv.DictReader(fh):
            date = dt.date.fromisoformat(row["date"])
            weather[date] = dict(
                avg_temperature=float(row["avg_temp_c"]),
                avg_wind_speed=float(row["avg_wind_kmh"]),
                fog=_read_flag(row["fog"]),
                rain=_read_flag(row["rain"]),
                snow=_read_flag(row["snow"]),
                storm=_read_flag(row["storm"]),
            )
    calendar: dict[dt.date, dict] = {}
    with open(calendar_path, newline="") as fh:
        for row in csv.DictReader(fh):
            date = dt.date.fromisoformat(row["date"])
            calendar[date] = dict(
                is_public_holiday=_read_flag(row["public_holiday"]),
                is_school_day=_read_flag(row["school_day"]),
            )
    dates = sorted(weather)
    if not dates:
        raise PipelineError("weather file is empty")
    if epoch is None:
        epoch = dates[0]
    contexts = []
    for date in dates:
        if date not in calendar:
            raise PipelineError(f"calendar file has no entry for {date}")
        contexts.append(DayContext.build(date, epoch, **weather[date], **calendar[date]))
    return contexts


class Observation(NamedTuple):
    """One (station, half-hour) row; net demand is positive on bike inflow."""

    station: int
    h: int
    features: np.ndarray  # local schema; the station id is the separate field
    withdrawals: int
    returns: int
    net_demand: int


class Dataset:
    """Dense per-(station, half-hour) observations over a contiguous day range.

    Counts are stored as (n_stations, n_days*48) arrays; the observation
    order, where a flat index is needed, is station-major then half-hour.
    """

    def __init__(
        self,
        epoch: dt.date,
        contexts: list[DayContext],
        withdrawals: np.ndarray,
        returns: np.ndarray,
        split_plan: dict[int, str] | None = None,
    ):
        self.epoch = epoch
        self.contexts = contexts
        self.withdrawals = np.asarray(withdrawals, dtype=np.int64)
        self.returns = np.asarray(returns, dtype=np.int64)
        self.split_plan = dict(split_plan or {})
        n_days = len(contexts)
        expected = (self.withdrawals.shape[0], n_days * SLOTS_PER_DAY)
        if self.withdrawals.shape != expected or self.returns.shape != expected:
            raise ValueError(f"count arrays must be {expected}")
        for i, ctx in enumerate(contexts):
            if (ctx.date - epoch).days != i:
                raise ValueError(f"contexts not contiguous at {ctx.date}")

    @property
    def n_stations(self) -> int:
        return self.withdrawals.shape[0]

    @property
    def n_days(self) -> int:
        return len(self.contexts)

    @property
    def n_slots(self) -> int:
        return self.withdrawals.shape[1]

    @property
    def net(self) -> np.ndarray:
        """Net demand: returns minus withdrawals (positive = inflow of bikes)."""
        return self.returns - self.withdrawals

    @property
    def n_observations(self) -> int:
        return self.n_stations * self.n_slots

    def years(self) -> list[int]:
        return sorted({ctx.date.year for ctx in self.contexts})

    def split_by_year(self, plan: dict[int, str]) -> "Dataset":
        """Tag observations by year role; every dataset year must be in the plan."""
        for year in self.years():
            if year not in plan:
                raise PipelineError(f"split plan is missing year {year}")
        for year, role in plan.items():
            if role not in ROLES:
                raise PipelineError(f"unknown role {role!r} for year {year}")
        return Dataset(self.epoch, self.contexts, self.withdrawals, self.returns, plan)

    def day_indices(self, role: str | None = None) -> np.ndarray:
        if role is None:
            return np.arange(self.n_days)
        days = [
            i for i, ctx in enumerate(self.contexts) if self.split_plan.get(ctx.date.year) == role
        ]
        return np.array(days, dtype=np.int64)

    def view(self, role: str | None = None) -> "DatasetView":
        return DatasetView(self, self.day_indices(role))

    def day_net(self, day: int) -> np.ndarray:
        """Realized net demand of one day as an (n_stations, 48) matrix."""
        lo = day * SLOTS_PER_DAY
        return self.net[:, lo : lo + SLOTS_PER_DAY]

    def observation(self, station: int, h: int) -> Observation:
        ctx = self.contexts[h // SLOTS_PER_DAY]
        return Observation(
            station=station,
            h=h,
            features=day_feature_block(ctx)[h % SLOTS_PER_DAY],
            withdrawals=int(self.withdrawals[station, h]),
            returns=int(self.returns[station, h]),
            net_demand=int(self.net[station, h]),
        )


class DatasetView:
    """A day-subset of a dataset; half-hour indices stay relative to the base epoch."""

    def __init__(self, base: Dataset, day_idx: np.ndarray):
        self.base = base
        self.day_idx = np.asarray(day_idx, dtype=np.int64)
        self._slot_idx = (
            self.day_idx[:, None] * SLOTS_PER_DAY + np.arange(SLOTS_PER_DAY)[None, :]
        ).reshape(-1)

    @property
    def n_stations(self) -> int:
        return self.base.n_stations

    @property
    def n_days(self) -> int:
        return len(self.day_idx)

    @property
    def n_rows(self) -> int:
        return self.n_stations * self.n_days * SLOTS_PER_DAY

    @property
    def contexts(self) -> list[DayContext]:
        return [self.base.contexts[i] for i in self.day_idx]

    def hh_indices(self) -> np.ndarray:
        """Absolute half-hour indices covered by this view (one day-block at a time)."""
        return self._slot_idx

    def targets(self, station: int | None = None) -> np.ndarray:
        """Net-demand targets; all stations stacked station-major when station is None."""
        net = self.base.net[:, self._slot_idx]
        return net.reshape(-1) if station is None else net[station]

    def features(self, approach: str, station: int | None = None) -> np.ndarray:
        """Feature matrix matching :meth:`targets` row order."""
        blocks = []
        if approach == "global":
            for s in range(self.n_stations):
                for d in self.day_idx:
                    blocks.append(day_feature_block(self.base.contexts[d], station=s))
        elif approach == "local":
            if station is None:
                raise ValueError("local features require a station")
            for d in self.day_idx:
                blocks.append(day_feature_block(self.base.contexts[d]))
        else:
            raise ValueError(f"unknown approach {approach!r}")
        if not blocks:
            return np.empty((0, len(feature_names(approach))))
        return np.vstack(blocks)


def aggregate(trips: list[TripRecord], layout: Layout, contexts: list[DayContext]) -> Dataset:
    """Count withdrawals/returns per (station, half-hour) over the context range.

    The date range is the contiguous span of ``contexts``; every trip must
    start inside it.  Returns falling after the range end are dropped (the
    trip still contributes its withdrawal), mirroring log truncation.
    """
    if not contexts:
        raise PipelineError("no day contexts given")
    epoch = contexts[0].date
    n_days = len(contexts)
    known = {ctx.date for ctx in contexts}
    n_slots = n_days * SLOTS_PER_DAY
    n = layout.n_stations
    withdrawals = np.zeros((n, n_slots), dtype=np.int64)
    returns = np.zeros((n, n_slots), dtype=np.int64)
    for trip in trips:
        w_date = trip.withdrawal_time.date()
        if w_date not in known:
            raise PipelineError(f"missing DayContext for {w_date}")
        if not (0 <= trip.origin < n and 0 <= trip.destination < n):
            raise PipelineError(f"trip references station outside layout: {trip}")
        wh = hh_index(trip.withdrawal_time, epoch)
        withdrawals[trip.origin, wh] += 1
        rh = hh_index(trip.return_time, epoch)
        if rh < n_slots:
            returns[trip.destination, rh] += 1
    return Dataset(epoch, contexts, withdrawals, returns)
