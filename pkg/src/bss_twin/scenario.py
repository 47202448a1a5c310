"""Daily demand scenarios: historical replay and seeded NHPP sampling.

A scenario is one day of timestamped withdrawal requests with destinations
and trip durations.  Synthetic scenarios sample, per station, a Poisson count
for each half-hour slot at the fitted rate and place the arrivals uniformly
inside the slot (the exact sampler for piecewise-constant intensity; no
thinning).  Returns are trip-conserving: every sampled withdrawal carries its
destination and duration, so the simulator's bike count stays exact.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass

import numpy as np

from .core import DAY_SECONDS, SLOT_SECONDS, SLOTS_PER_DAY, DayContext
from .pipeline import Dataset, TripRecord

N_DAY_CLASSES = 6  # (working, Saturday, Sunday) x (dry, rainy)
DEFAULT_SLOT_BANDS = 8  # OD destination bands of 6 slots each
_DURATION_QS = np.linspace(0.0, 1.0, 11)


def day_class(ctx: DayContext) -> int:
    """Rate-fitting class of a day: day type crossed with the rain flag."""
    return ctx.day_type * 2 + int(ctx.rain)


@dataclass(frozen=True)
class TripEvent:
    request_time: float  # seconds from midnight
    origin: int
    destination: int
    duration: float  # seconds

    def __post_init__(self):
        if not (0 <= self.request_time < DAY_SECONDS):
            raise ValueError(f"request_time {self.request_time} outside the day")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    def sort_key(self):
        return (self.request_time, self.origin, self.destination)


@dataclass
class Scenario:
    ctx: DayContext
    events: list[TripEvent]

    def __post_init__(self):
        self.events = sorted(self.events, key=TripEvent.sort_key)

    def __len__(self):
        return len(self.events)


@dataclass
class RateProfile:
    """Per (station, slot, day class) event rates, in events per half-hour."""

    withdraw: np.ndarray  # (n_stations, 48, 6)
    ret: np.ndarray

    @property
    def n_stations(self) -> int:
        return self.withdraw.shape[0]


def fit_rates(data) -> RateProfile:
    """Mean withdrawals/returns per (station, slot, day class) over the view's days."""
    view = data.view(None) if isinstance(data, Dataset) else data
    base = view.base
    n = base.n_stations
    withdraw = np.zeros((n, SLOTS_PER_DAY, N_DAY_CLASSES))
    ret = np.zeros((n, SLOTS_PER_DAY, N_DAY_CLASSES))
    days_by_class: dict[int, list[int]] = {}
    for d in view.day_idx:
        days_by_class.setdefault(day_class(base.contexts[d]), []).append(int(d))
    for cls, days in days_by_class.items():
        slots = (np.asarray(days)[:, None] * SLOTS_PER_DAY + np.arange(SLOTS_PER_DAY)).reshape(-1)
        w = base.withdrawals[:, slots].reshape(n, len(days), SLOTS_PER_DAY)
        r = base.returns[:, slots].reshape(n, len(days), SLOTS_PER_DAY)
        withdraw[:, :, cls] = w.mean(axis=1)
        ret[:, :, cls] = r.mean(axis=1)
    return RateProfile(withdraw, ret)


@dataclass
class ODModel:
    """Destination choice and duration quantiles per (origin, slot band)."""

    dest_probs: np.ndarray  # (n_stations, n_bands, n_stations), rows sum to 1
    duration_q: np.ndarray  # (n_stations, n_bands, 11) empirical deciles

    @property
    def n_stations(self) -> int:
        return self.dest_probs.shape[0]

    @property
    def n_bands(self) -> int:
        return self.dest_probs.shape[1]

    def band_of_slot(self, slot: int) -> int:
        return min(slot * self.n_bands // SLOTS_PER_DAY, self.n_bands - 1)

    def sample_destination(self, origin: int, band: int, u: float) -> int:
        cdf = np.cumsum(self.dest_probs[origin, band])
        return int(min(np.searchsorted(cdf, u, side="right"), self.n_stations - 1))

    def sample_duration(self, origin: int, band: int, u: float) -> float:
        return float(max(1.0, np.interp(u, _DURATION_QS, self.duration_q[origin, band])))


def fit_od(
    trips: list[TripRecord],
    n_stations: int,
    n_bands: int = DEFAULT_SLOT_BANDS,
    default_duration: float = 900.0,
) -> ODModel:
    """Empirical OD distribution; sparse cells fall back to origin, then global."""
    counts = np.zeros((n_stations, n_bands, n_stations))
    durations: dict[tuple[int, int], list[float]] = {}
    all_durations: dict[int, list[float]] = {}
    for trip in trips:
        secs = (
            trip.withdrawal_time.hour * 3600
            + trip.withdrawal_time.minute * 60
            + trip.withdrawal_time.second
        )
        band = min((secs // SLOT_SECONDS) * n_bands // SLOTS_PER_DAY, n_bands - 1)
        counts[trip.origin, band, trip.destination] += 1
        dur = max(1.0, (trip.return_time - trip.withdrawal_time).total_seconds())
        durations.setdefault((trip.origin, band), []).append(dur)
        all_durations.setdefault(trip.origin, []).append(dur)
    origin_counts = counts.sum(axis=1)
    global_counts = origin_counts.sum(axis=0)
    probs = np.empty_like(counts)
    duration_q = np.empty((n_stations, n_bands, len(_DURATION_QS)))
    pooled = [d for ds in all_durations.values() for d in ds]
    global_q = (
        np.quantile(pooled, _DURATION_QS) if pooled else np.full(len(_DURATION_QS), default_duration)
    )
    for s in range(n_stations):
        origin_q = (
            np.quantile(all_durations[s], _DURATION_QS) if s in all_durations else global_q
        )
        for b in range(n_bands):
            cell = counts[s, b]
            if cell.sum() > 0:
                probs[s, b] = cell / cell.sum()
            elif origin_counts[s].sum() > 0:
                probs[s, b] = origin_counts[s] / origin_counts[s].sum()
            elif global_counts.sum() > 0:
                probs[s, b] = global_counts / global_counts.sum()
            else:
                probs[s, b] = 1.0 / n_stations
            key = (s, b)
            duration_q[s, b] = np.quantile(durations[key], _DURATION_QS) if key in durations else origin_q
    return ODModel(probs, duration_q)


def uniform_od(n_stations: int, mean_duration: float = 900.0, spread: float = 300.0) -> ODModel:
    """Uniform destinations with a flat duration band; synthetic bootstrap OD."""
    probs = np.full((n_stations, DEFAULT_SLOT_BANDS, n_stations), 1.0 / n_stations)
    q = np.linspace(mean_duration - spread, mean_duration + spread, len(_DURATION_QS))
    duration_q = np.tile(np.maximum(q, 1.0), (n_stations, DEFAULT_SLOT_BANDS, 1))
    return ODModel(probs, duration_q)


def replay_scenario(trips: list[TripRecord], date: dt.date, ctx: DayContext) -> Scenario:
    """Scenario of the trips withdrawn on ``date``; midnight-crossers keep full duration."""
    events = []
    for trip in trips:
        if trip.withdrawal_time.date() != date:
            continue
        secs = (
            trip.withdrawal_time.hour * 3600
            + trip.withdrawal_time.minute * 60
            + trip.withdrawal_time.second
        )
        duration = max(1.0, (trip.return_time - trip.withdrawal_time).total_seconds())
        events.append(TripEvent(float(secs), trip.origin, trip.destination, duration))
    return Scenario(ctx, events)


def sample_scenario(rates: RateProfile, od: ODModel, ctx: DayContext, seed: int) -> Scenario:
    """Sample one day of withdrawal requests; pure function of its arguments."""
    if od.n_stations != rates.n_stations:
        raise ValueError("rate profile and OD model disagree on station count")
    rng = np.random.default_rng(seed)
    cls = day_class(ctx)
    events = []
    for s in range(rates.n_stations):
        counts = rng.poisson(rates.withdraw[s, :, cls])
        for slot in range(SLOTS_PER_DAY):
            k = int(counts[slot])
            if k == 0:
                continue
            times = np.sort(rng.uniform(0.0, SLOT_SECONDS, k))
            band = od.band_of_slot(slot)
            for t in times:
                dest = od.sample_destination(s, band, rng.uniform())
                dur = od.sample_duration(s, band, rng.uniform())
                events.append(TripEvent(float(slot * SLOT_SECONDS + t), s, dest, dur))
    return Scenario(ctx, events)


# -- scenario files ----------------------------------------------------------

_CTX_FIELDS = (
    "date",
    "week_index",
    "public_holiday",
    "school_day",
    "avg_temp_c",
    "avg_wind_kmh",
    "fog",
    "rain",
    "snow",
    "storm",
)


def write_scenario(scenario: Scenario, events_path, context_path) -> None:
    with open(events_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["request_time_s", "origin", "destination", "duration_s"])
        for ev in scenario.events:
            writer.writerow([repr(ev.request_time), ev.origin, ev.destination, repr(ev.duration)])
    ctx = scenario.ctx
    with open(context_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CTX_FIELDS)
        writer.writerow(
            [
                ctx.date.isoformat(),
                ctx.week_index,
                int(ctx.is_public_holiday),
                int(ctx.is_school_day),
                repr(ctx.avg_temperature),
                repr(ctx.avg_wind_speed),
                int(ctx.fog),
                int(ctx.rain),
                int(ctx.snow),
                int(ctx.storm),
            ]
        )


def read_scenario(events_path, context_path) -> Scenario:
    with open(context_path, newline="") as fh:
        row = next(iter(csv.DictReader(fh)))
    ctx = DayContext(
        date=dt.date.fromisoformat(row["date"]),
        week_index=int(row["week_index"]),
        is_public_holiday=bool(int(row["public_holiday"])),
        is_school_day=bool(int(row["school_day"])),
        avg_temperature=float(row["avg_temp_c"]),
        avg_wind_speed=float(row["avg_wind_kmh"]),
        fog=bool(int(row["fog"])),
        rain=bool(int(row["rain"])),
        snow=bool(int(row["snow"])),
        storm=bool(int(row["storm"])),
    )
    events = []
    with open(events_path, newline="") as fh:
        for row in csv.DictReader(fh):
            events.append(
                TripEvent(
                    float(row["request_time_s"]),
                    int(row["origin"]),
                    int(row["destination"]),
                    float(row["duration_s"]),
                )
            )
    return Scenario(ctx, events)


def scenario_to_trips(scenario: Scenario) -> list[TripRecord]:
    """Implied trip records with absolute timestamps (seconds resolution)."""
    midnight = dt.datetime.combine(scenario.ctx.date, dt.time())
    trips = []
    for ev in scenario.events:
        start = midnight + dt.timedelta(seconds=int(ev.request_time))
        end = midnight + dt.timedelta(seconds=int(ev.request_time) + max(1, int(round(ev.duration))))
        trips.append(TripRecord(start, ev.origin, end, ev.destination))
    return trips
