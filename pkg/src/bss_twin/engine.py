"""Discrete-event simulation of one day of user trips and vehicle relocation.

Events are processed in time order; simultaneous events follow a fixed kind
order (returns before withdrawals before vehicle events before shift and slot
events), then station/vehicle id, then insertion order, so a run is a pure
function of its inputs.

User rules: a withdrawal at an empty station is missed and the trip is lost;
a return at a full station is missed and the bike is redirected to the
nearest station with free capacity (every further full station counts again).
If the whole system is full the bike is held and retried at the next slot
boundary.  Vehicles execute single-station pickup/drop tasks issued by the
relocation policy, clipped to feasibility on arrival; distance is booked at
departure and remaining load goes back to the depot at shift end.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .core import DAY_SECONDS, SLOT_SECONDS, SLOTS_PER_DAY, DayContext, Fleet, Layout, validate_layout
from .relocation import PICKUP, VehicleTask
from .scenario import Scenario


class SimulationError(ValueError):
    pass


class EventKind(IntEnum):
    RETURN_ARRIVAL = 0
    WITHDRAWAL_REQUEST = 1
    VEHICLE_ARRIVAL = 2
    VEHICLE_SERVICE_DONE = 3
    SHIFT_START = 4
    SHIFT_END = 5
    SLOT_BOUNDARY = 6


@dataclass
class KpiCounters:
    missed_withdrawals: int = 0
    missed_returns: int = 0
    total_km: float = 0.0
    relocated_bikes: int = 0

    @property
    def total_missed(self) -> int:
        return self.missed_withdrawals + self.missed_returns


PER_SLOT_KEYS = ("missed_withdrawals", "missed_returns", "relocated_bikes", "total_km")


@dataclass
class DayKpi:
    ctx: DayContext
    counters: KpiCounters
    per_slot: dict[str, np.ndarray]
    final_stock: np.ndarray


@dataclass
class _VehicleSim:
    vehicle: object
    location: int
    load: int = 0
    task: VehicleTask | None = None
    moving: bool = False  # in transit or mid-service
    started: bool = False
    ending: bool = False
    ended: bool = False


class _Sim:
    def __init__(self, layout, fleet, scenario, policy, forecasts, per_bike_service_s, audit):
        self.layout = layout
        self.caps = layout.capacities
        self.time_mat = layout.graph.travel_time
        self.dist_mat = layout.graph.distance
        self.depot = layout.depot
        self.policy = policy
        self.per_bike_s = per_bike_service_s
        self.audit = audit

        self.stock = layout.initial_stocks.copy()
        self.initial_total = int(self.stock.sum())
        self.depot_stock = 0
        self.in_transit = 0
        self.held: list[int] = []
        self.clock = 0.0
        self.counters = KpiCounters()
        self.per_slot = {
            key: np.zeros(SLOTS_PER_DAY, dtype=float if key == "total_km" else np.int64)
            for key in PER_SLOT_KEYS
        }

        self.vehicles = []
        for v in fleet.vehicles:
            start = v.start_station if v.start_station is not None else self.depot
            self.vehicles.append(_VehicleSim(v, location=start))

        self.heap: list = []
        self.seq = 0
        for ev in scenario.events:
            self._push(ev.request_time, EventKind.WITHDRAWAL_REQUEST, ev.origin, ev)
        for i, v in enumerate(fleet.vehicles):
            self._push(float(v.shift.start), EventKind.SHIFT_START, i, None)
            self._push(float(v.shift.end), EventKind.SHIFT_END, i, None)
        for k in range(1, SLOTS_PER_DAY):
            self._push(float(k * SLOT_SECONDS), EventKind.SLOT_BOUNDARY, k, None)

        policy.begin_day(layout, forecasts, self.stock)

    def _push(self, time, kind, key, payload):
        heapq.heappush(self.heap, (time, int(kind), key, self.seq, payload))
        self.seq += 1

    def _slot(self, time: float) -> int:
        return min(int(time // SLOT_SECONDS), SLOTS_PER_DAY - 1)

    def _count(self, key: str, time: float, amount) -> None:
        self.per_slot[key][self._slot(time)] += amount

    def run(self) -> tuple[KpiCounters, dict, np.ndarray]:
        handlers = {
            EventKind.RETURN_ARRIVAL: self._on_return,
            EventKind.WITHDRAWAL_REQUEST: self._on_withdrawal,
            EventKind.VEHICLE_ARRIVAL: self._on_vehicle_arrival,
            EventKind.VEHICLE_SERVICE_DONE: self._on_service_done,
            EventKind.SHIFT_START: self._on_shift_start,
            EventKind.SHIFT_END: self._on_shift_end,
            EventKind.SLOT_BOUNDARY: self._on_slot_boundary,
        }
        while self.heap:
            time, kind, key, _, payload = heapq.heappop(self.heap)
            self.clock = time
            handlers[EventKind(kind)](time, key, payload)
            if self.audit:
                self._check_invariants()
        self.counters = KpiCounters(
            missed_withdrawals=int(self.per_slot["missed_withdrawals"].sum()),
            missed_returns=int(self.per_slot["missed_returns"].sum()),
            total_km=float(self.per_slot["total_km"].sum()),
            relocated_bikes=int(self.per_slot["relocated_bikes"].sum()),
        )
        return self.counters, self.per_slot, self.stock

    # -- user events ---------------------------------------------------------

    def _on_withdrawal(self, time, station, trip):
        if self.stock[station] > 0:
            self.stock[station] -= 1
            self.in_transit += 1
            arrival = time + trip.duration
            if arrival < DAY_SECONDS:
                self._push(arrival, EventKind.RETURN_ARRIVAL, trip.destination, None)
            # else: still riding at day end
        else:
            self._count("missed_withdrawals", time, 1)

    def _on_return(self, time, station, _payload):
        if self.stock[station] < self.caps[station]:
            self.stock[station] += 1
            self.in_transit -= 1
            return
        self._count("missed_returns", time, 1)
        target = self._nearest_free(station)
        if target is None:
            self.held.append(station)
            self.in_transit -= 1
            return
        arrival = time + float(self.time_mat[station, target])
        if arrival < DAY_SECONDS:
            self._push(arrival, EventKind.RETURN_ARRIVAL, target, None)
        # else the bike stays in transit past midnight

    def _nearest_free(self, full_station) -> int | None:
        best = None
        best_key = None
        for s in range(self.layout.n_stations):
            if s == full_station or self.stock[s] >= self.caps[s]:
                continue
            key = (float(self.time_mat[full_station, s]), s)
            if best_key is None or key < best_key:
                best_key, best = key, s
        return best

    # -- vehicle events ------------------------------------------------------

    def _claimed(self, except_vehicle: int) -> frozenset[int]:
        return frozenset(
            v.task.station for i, v in enumerate(self.vehicles)
            if v.task is not None and i != except_vehicle
        )

    def _assign(self, time, vid) -> None:
        v = self.vehicles[vid]
        task = self.policy.next_task(
            vid, v.location, v.load, v.vehicle.capacity, self.stock, self._claimed(vid)
        )
        if task is None:
            return
        v.task = task
        v.moving = True
        self._count("total_km", time, float(self.dist_mat[v.location, task.station]) / 1000.0)
        self._push(
            time + float(self.time_mat[v.location, task.station]),
            EventKind.VEHICLE_ARRIVAL,
            vid,
            None,
        )

    def _on_vehicle_arrival(self, time, vid, _payload):
        v = self.vehicles[vid]
        task = v.task
        station = task.station
        v.location = station
        if task.kind == PICKUP:
            q = int(min(task.quantity, self.stock[station], v.vehicle.capacity - v.load))
            self.stock[station] -= q
            v.load += q
        else:
            q = int(min(task.quantity, v.load, self.caps[station] - self.stock[station]))
            self.stock[station] += q
            v.load -= q
        if q > 0:
            self._count("relocated_bikes", time, q)
        else:
            self.policy.on_clipped(vid, station, self._slot(time))
        self._push(time + self.per_bike_s * q, EventKind.VEHICLE_SERVICE_DONE, vid, None)

    def _on_service_done(self, time, vid, _payload):
        v = self.vehicles[vid]
        v.task = None
        v.moving = False
        if v.ending or time >= v.vehicle.shift.end:
            self._retire(time, vid)
        else:
            self._assign(time, vid)

    def _on_shift_start(self, time, vid, _payload):
        v = self.vehicles[vid]
        v.started = True
        self._assign(time, vid)

    def _on_shift_end(self, time, vid, _payload):
        v = self.vehicles[vid]
        v.ending = True
        if not v.moving and not v.ended:
            self._retire(time, vid)

    def _retire(self, time, vid) -> None:
        v = self.vehicles[vid]
        self._count("total_km", time, float(self.dist_mat[v.location, self.depot]) / 1000.0)
        self.depot_stock += v.load  # leftover load leaves circulation at the depot
        v.load = 0
        v.location = self.depot
        v.ended = True

    def _on_slot_boundary(self, time, slot, _payload):
        self.policy.on_slot(slot, self.stock)
        if self.held:
            retry, self.held = self.held, []
            for station in retry:
                self.in_transit += 1  # re-enters the return flow
                self._on_return(time, station, None)
        for vid, v in enumerate(self.vehicles):
            if v.started and not v.ended and not v.moving and v.task is None:
                self._assign(time, vid)

    # -- audit ----------------------------------------------------------------

    def _check_invariants(self) -> None:
        if np.any(self.stock < 0) or np.any(self.stock > self.caps):
            raise AssertionError(f"stock out of bounds at t={self.clock}: {self.stock}")
        for v in self.vehicles:
            if not (0 <= v.load <= v.vehicle.capacity):
                raise AssertionError(f"vehicle load out of bounds at t={self.clock}")
        total = (
            int(self.stock.sum())
            + sum(v.load for v in self.vehicles)
            + self.in_transit
            + len(self.held)
            + self.depot_stock
        )
        if total != self.initial_total:
            raise AssertionError(
                f"bike conservation broken at t={self.clock}: {total} != {self.initial_total}"
            )


def simulate_day(
    layout: Layout,
    fleet: Fleet,
    scenario: Scenario,
    policy,
    forecasts: np.ndarray,
    seed: int = 0,
    per_bike_service_s: float = 30.0,
    audit: bool = False,
) -> DayKpi:
    """Run one day; deterministic given its inputs (the seed is reserved for
    stochastic extensions such as random travel times)."""
    problems = validate_layout(layout)
    if problems:
        raise SimulationError("invalid layout: " + "; ".join(problems))
    forecasts = np.asarray(forecasts, dtype=float)
    if forecasts.shape != (layout.n_stations, SLOTS_PER_DAY):
        raise SimulationError(
            f"forecast coverage gap: expected {(layout.n_stations, SLOTS_PER_DAY)}, "
            f"got {forecasts.shape}"
        )
    if np.isnan(forecasts).any():
        raise SimulationError("forecast coverage gap: NaN predictions")
    sim = _Sim(layout, fleet, scenario, policy, forecasts, per_bike_service_s, audit)
    counters, per_slot, stock = sim.run()
    return DayKpi(scenario.ctx, counters, per_slot, stock.copy())


# -- aggregation --------------------------------------------------------------

@dataclass
class GroupStats:
    n_days: int
    mean_missed_withdrawals: float
    mean_missed_returns: float
    mean_total_missed: float
    mean_total_km: float
    mean_relocated_bikes: float
    box_total_missed: tuple[float, float, float, float, float]  # min, q1, median, q3, max


def aggregate_kpis(
    days: list[DayKpi],
    grouping: str = "none",
    relocation_days_only: bool = False,
) -> dict:
    """Group means and total-missed box statistics; optionally drop Sundays."""
    if relocation_days_only:
        days = [d for d in days if not d.ctx.is_sunday]
    if not days:
        raise SimulationError("no days to aggregate")
    if grouping == "none":
        groups = {"all": days}
    elif grouping == "month":
        groups = {}
        for d in days:
            groups.setdefault(d.ctx.month, []).append(d)
    elif grouping == "day_of_week":
        groups = {}
        for d in days:
            groups.setdefault(d.ctx.day_of_week, []).append(d)
    else:
        raise SimulationError(f"unknown grouping {grouping!r}")
    out = {}
    for key in sorted(groups, key=str):
        members = groups[key]
        totals = np.array([d.counters.total_missed for d in members], dtype=float)
        box = np.percentile(totals, [0, 25, 50, 75, 100])
        out[key] = GroupStats(
            n_days=len(members),
            mean_missed_withdrawals=float(np.mean([d.counters.missed_withdrawals for d in members])),
            mean_missed_returns=float(np.mean([d.counters.missed_returns for d in members])),
            mean_total_missed=float(totals.mean()),
            mean_total_km=float(np.mean([d.counters.total_km for d in members])),
            mean_relocated_bikes=float(np.mean([d.counters.relocated_bikes for d in members])),
            box_total_missed=tuple(float(x) for x in box),
        )
    return out
