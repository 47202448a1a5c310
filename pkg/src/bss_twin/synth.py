"""Seeded synthetic inputs: layout, weather/calendar, rate profiles, trip logs.

Everything is a pure function of its seed, so regenerating with the same
configuration is byte-identical.  The demand shape mimics a mid-size European
station-based system: morning, noon, and evening peaks on working days,
flatter weekend profiles, fewer trips in rain and cold, and per-station
activity factors so stations differ enough for local models to matter.
"""

from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path

import numpy as np

from .core import DayContext, Layout, SLOTS_PER_DAY, Station, TravelGraph
from .pipeline import TripRecord
from .scenario import ODModel, RateProfile, sample_scenario, scenario_to_trips

VEHICLE_SPEED_MPS = 25.0 / 3.6  # relocation van in urban traffic
BIKE_SPEED_MPS = 14.0 / 3.6
STREET_FACTOR = 1.3  # Euclidean to street distance

_CLASS_SCALE = {0: 1.0, 1: 0.72, 2: 0.5}
_RAIN_SCALE = 0.55


def synth_layout(n_stations: int, seed: int, area_m: float = 7000.0) -> Layout:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA]))
    pos = rng.uniform(0.0, area_m, size=(n_stations, 2))
    cap_pool = np.array([5, 8, 10, 10, 10, 12, 14, 16, 20, 26])
    caps = rng.choice(cap_pool, size=n_stations)
    stations = [
        Station(
            id=i,
            capacity=int(caps[i]),
            initial_stock=int(caps[i]) // 2,
            x_m=round(float(pos[i, 0]), 1),
            y_m=round(float(pos[i, 1]), 1),
            elevation_m=round(float(rng.uniform(80.0, 144.0)), 1),
        )
        for i in range(n_stations)
    ]
    nodes = np.vstack([pos, [[area_m / 2.0, area_m / 2.0]]])  # depot at the center
    diff = nodes[:, None, :] - nodes[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2)) * STREET_FACTOR
    dist = np.round(dist, 1)
    time = np.round(dist / VEHICLE_SPEED_MPS, 1)
    return Layout(stations, TravelGraph(time, dist))


def _slot_shape(centers, widths, heights, floor):
    slots = np.arange(SLOTS_PER_DAY, dtype=float)
    shape = np.full(SLOTS_PER_DAY, floor)
    for c, w, h in zip(centers, widths, heights):
        shape += h * np.exp(-0.5 * ((slots - c) / w) ** 2)
    return shape / shape.sum()


def synth_rates(n_stations: int, seed: int, events_per_station_day: float = 16.0) -> RateProfile:
    """Per-class withdrawal rates; the noon peak dominates like the case study's."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB]))
    shapes = {
        0: _slot_shape((15, 24, 36), (2.5, 2.0, 3.0), (1.0, 1.1, 0.8), 0.02),
        1: _slot_shape((22, 36), (4.0, 4.0), (1.0, 0.6), 0.02),
        2: _slot_shape((27,), (5.0,), (1.0,), 0.02),
    }
    station_factor = rng.lognormal(mean=0.0, sigma=0.45, size=n_stations)
    withdraw = np.zeros((n_stations, SLOTS_PER_DAY, 6))
    for dtype in (0, 1, 2):
        for rainy in (0, 1):
            cls = dtype * 2 + rainy
            scale = events_per_station_day * _CLASS_SCALE[dtype] * (_RAIN_SCALE if rainy else 1.0)
            withdraw[:, :, cls] = station_factor[:, None] * scale * shapes[dtype][None, :]
    return RateProfile(withdraw, withdraw.copy())


def synth_od(layout: Layout, seed: int) -> ODModel:
    """Gravity destination choice; durations follow street distance with spread."""
    n = layout.n_stations
    dist = layout.graph.distance[:n, :n]
    scale = max(float(np.median(dist[dist > 0])), 1.0)
    weights = np.exp(-dist / scale)
    np.fill_diagonal(weights, 0.35)  # some round trips
    probs_one = weights / weights.sum(axis=1, keepdims=True)
    probs = np.repeat(probs_one[:, None, :], 8, axis=1)
    ride = dist / BIKE_SPEED_MPS
    qs = np.linspace(0.7, 1.9, 11)
    duration_q = np.empty((n, 8, 11))
    for s in range(n):
        typical = float((probs_one[s] * ride[s]).sum()) + 120.0
        duration_q[s, :, :] = np.maximum(typical * qs, 60.0)
    return ODModel(probs, np.round(duration_q, 1))


def temperature_factor(avg_temperature: float) -> float:
    """Mild weather boosts ridership; extremes suppress it."""
    return 0.7 + 0.3 * float(np.exp(-(((avg_temperature - 20.0) / 14.0) ** 2)))


def synth_day_contexts(start: dt.date, end: dt.date, seed: int) -> list[DayContext]:
    """Seasonal weather plus holiday/school calendar between two dates inclusive."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC]))
    n_days = (end - start).days + 1
    if n_days <= 0:
        raise ValueError(f"empty date range {start}..{end}")
    contexts = []
    for i in range(n_days):
        date = start + dt.timedelta(days=i)
        doy = date.timetuple().tm_yday
        temp = 13.0 - 11.0 * np.cos(2.0 * np.pi * (doy - 15) / 365.0) + rng.normal(0.0, 2.5)
        rain_p = 0.32 if date.month in (3, 4, 5, 10, 11) else 0.22
        summer_break = (date.month == 6 and date.day >= 10) or date.month in (7, 8) or (
            date.month == 9 and date.day <= 7
        )
        winter_break = (date.month == 12 and date.day >= 24) or (date.month == 1 and date.day <= 6)
        contexts.append(
            DayContext.build(
                date,
                start,
                is_public_holiday=(date.month, date.day) in {(1, 1), (4, 25), (5, 1), (8, 15), (12, 25)},
                is_school_day=not (summer_break or winter_break),
                avg_temperature=round(float(temp), 1),
                avg_wind_speed=round(float(rng.gamma(2.0, 3.0)), 1),
                fog=bool(rng.random() < (0.12 if date.month in (11, 12, 1) else 0.02)),
                rain=bool(rng.random() < rain_p),
                snow=bool(rng.random() < (0.06 if date.month in (12, 1, 2) else 0.0)),
                storm=bool(rng.random() < 0.02),
            )
        )
    return contexts


def synth_trip_log(
    layout: Layout,
    contexts: list[DayContext],
    rates: RateProfile,
    od: ODModel,
    seed: int,
) -> list[TripRecord]:
    trips: list[TripRecord] = []
    for i, ctx in enumerate(contexts):
        factor = temperature_factor(ctx.avg_temperature)
        day_rates = RateProfile(rates.withdraw * factor, rates.ret * factor)
        day_seed = int(np.random.SeedSequence([seed, 0xD, i]).generate_state(1)[0])
        scenario = sample_scenario(day_rates, od, ctx, day_seed)
        trips.extend(scenario_to_trips(scenario))
    return trips


def write_synthetic_inputs(
    out_dir,
    n_stations: int,
    start: dt.date,
    end: dt.date,
    seed: int,
    events_per_station_day: float = 16.0,
) -> dict[str, Path]:
    """Generate and write the full input file set; returns the path map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layout = synth_layout(n_stations, seed)
    rates = synth_rates(n_stations, seed, events_per_station_day)
    od = synth_od(layout, seed)
    contexts = synth_day_contexts(start, end, seed)
    trips = synth_trip_log(layout, contexts, rates, od, seed)

    paths = {
        "layout": out_dir / "layout.csv",
        "graph_time": out_dir / "graph_time.csv",
        "graph_dist": out_dir / "graph_dist.csv",
        "trips": out_dir / "trips.csv",
        "weather": out_dir / "weather.csv",
        "calendar": out_dir / "calendar.csv",
    }
    with open(paths["layout"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "capacity", "initial_stock", "x_m", "y_m", "elevation_m"])
        for s in layout.stations:
            writer.writerow([s.id, s.capacity, s.initial_stock, repr(s.x_m), repr(s.y_m), repr(s.elevation_m)])
    np.savetxt(paths["graph_time"], layout.graph.travel_time, delimiter=",", fmt="%.1f")
    np.savetxt(paths["graph_dist"], layout.graph.distance, delimiter=",", fmt="%.1f")
    with open(paths["trips"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["withdrawal_time", "origin", "return_time", "destination"])
        for t in trips:
            writer.writerow(
                [t.withdrawal_time.isoformat(), t.origin, t.return_time.isoformat(), t.destination]
            )
    with open(paths["weather"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "avg_temp_c", "avg_wind_kmh", "fog", "rain", "snow", "storm"])
        for c in contexts:
            writer.writerow(
                [c.date.isoformat(), repr(c.avg_temperature), repr(c.avg_wind_speed),
                 int(c.fog), int(c.rain), int(c.snow), int(c.storm)]
            )
    with open(paths["calendar"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "public_holiday", "school_day"])
        for c in contexts:
            writer.writerow([c.date.isoformat(), int(c.is_public_holiday), int(c.is_school_day)])
    return paths
