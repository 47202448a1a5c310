"""Forecast-driven dynamic relocation: target inventories + greedy dispatch.

Targets come from the cumulative forecast net demand over a look-ahead
window: the stock band keeping the projected level inside [0, capacity] is
computed per station, and the target is its midpoint (rounded half-up).  A
station's urgency is its worst projected violation.  Idle vehicles greedily
chase the best urgency-per-second station compatible with their load
direction; replanning is
triggered by slot boundaries (targets roll), service completions, and shift
starts.  One station per task; routes emerge from successive replans.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SLOTS_PER_DAY

PICKUP = "pickup"
DROP = "drop"


@dataclass(frozen=True)
class PolicyParams:
    lookahead_slots: int = 4
    deadband_bikes: int = 2
    per_bike_service_s: float = 30.0


@dataclass(frozen=True)
class VehicleTask:
    vehicle_id: int
    station: int
    kind: str  # PICKUP or DROP
    quantity: int

    def __post_init__(self):
        if self.quantity < 1:
            raise ValueError("task quantity must be >= 1")
        if self.kind not in (PICKUP, DROP):
            raise ValueError(f"unknown task kind {self.kind!r}")


@dataclass
class TargetInventory:
    targets: np.ndarray  # int stock levels, one per station
    urgency: np.ndarray  # worst projected violation, one per station
    window: int


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def compute_targets(
    stock: np.ndarray,
    capacities: np.ndarray,
    forecasts: np.ndarray,
    slot: int,
    window: int,
) -> TargetInventory:
    """Target band from cumulative forecasts over the next ``window`` slots.

    The window starts at the current slot and truncates at the end of the
    day.  With cumulative sums ``c_k``, the stock band keeping the projection
    inside [0, capacity] is [max(0, -min c) .. min(cap, cap - max c)]; an
    empty band falls back to the point minimizing the worst violation.
    """
    n = len(stock)
    if forecasts.shape != (n, SLOTS_PER_DAY):
        raise ValueError(f"forecasts must be (n_stations, 48), got {forecasts.shape}")
    if not (0 <= slot < SLOTS_PER_DAY):
        raise ValueError(f"slot {slot} outside the day")
    lo_slot, hi_slot = slot, min(slot + window, SLOTS_PER_DAY)
    targets = np.zeros(n, dtype=np.int64)
    urgency = np.zeros(n, dtype=float)
    for s in range(n):
        cap = float(capacities[s])
        window_fc = forecasts[s, lo_slot:hi_slot]
        if window_fc.size == 0:
            targets[s] = _round_half_up(cap / 2.0)
            continue
        c = np.cumsum(window_fc)
        m, big_m = float(c.min()), float(c.max())
        lo, hi = max(0.0, -m), min(cap, cap - big_m)
        if lo <= hi:
            targets[s] = _round_half_up((lo + hi) / 2.0)
        else:
            # total swing exceeds capacity: balance shortfall against overflow
            targets[s] = min(max(_round_half_up((cap - big_m - m) / 2.0), 0), int(cap))
        projected = stock[s] + c
        violation = np.maximum(0.0, -projected) + np.maximum(0.0, projected - cap)
        urgency[s] = float(violation.max())
    return TargetInventory(targets, urgency, window)


def plan_next_task(
    vehicle_id: int,
    location: int,
    load: int,
    vehicle_capacity: int,
    stock: np.ndarray,
    capacities: np.ndarray,
    inv: TargetInventory,
    travel_time: np.ndarray,
    params: PolicyParams,
    claimed: frozenset[int] = frozenset(),
    banned: frozenset[int] = frozenset(),
) -> VehicleTask | None:
    """Best station for an idle vehicle, or None.

    Candidates deviate from target by at least the deadband in a direction
    the vehicle can serve; score is urgency per second of travel plus
    estimated service.  Ties go to the smaller travel time, then station id.
    An empty vehicle facing only deficit stations first fetches from the
    largest surplus, even below the deadband.
    """
    n = len(stock)
    dev = stock - inv.targets
    free_cap = vehicle_capacity - load
    best_key = None
    best_task = None
    for s in range(n):
        if s in claimed or s in banned:
            continue
        if dev[s] >= params.deadband_bikes and free_cap >= 1:
            kind, q = PICKUP, int(min(dev[s], free_cap, stock[s]))
        elif -dev[s] >= params.deadband_bikes and load >= 1:
            kind, q = DROP, int(min(-dev[s], load, capacities[s] - stock[s]))
        else:
            continue
        if q < 1:
            continue
        tt = float(travel_time[location, s])
        score = inv.urgency[s] / max(tt + params.per_bike_service_s * q, 1e-9)
        key = (-score, tt, s)
        if best_key is None or key < best_key:
            best_key = key
            best_task = VehicleTask(vehicle_id, s, kind, q)
    if best_task is not None:
        return best_task
    if load == 0 and free_cap >= 1:
        deficit_exists = any(
            -dev[s] >= params.deadband_bikes and s not in claimed for s in range(n)
        )
        if deficit_exists:
            fetch_key = None
            fetch = None
            for s in range(n):
                if s in claimed or s in banned or dev[s] < 1 or stock[s] < 1:
                    continue
                key = (-dev[s], float(travel_time[location, s]), s)
                if fetch_key is None or key < fetch_key:
                    fetch_key = key
                    fetch = VehicleTask(
                        vehicle_id, s, PICKUP, int(min(dev[s], free_cap, stock[s]))
                    )
            return fetch
    return None


class GreedyTargetPolicy:
    """Stateful policy handle driven by the simulation engine.

    Holds the current target inventory (recomputed at each slot boundary) and
    per-vehicle one-slot bans for stations whose service clipped to zero.
    """

    def __init__(self, params: PolicyParams | None = None):
        self.params = params or PolicyParams()
        self.inv: TargetInventory | None = None
        self._forecasts: np.ndarray | None = None
        self._capacities: np.ndarray | None = None
        self._travel_time: np.ndarray | None = None
        self._bans: dict[int, dict[int, int]] = {}  # vehicle -> station -> expiry slot

    def begin_day(self, layout, forecasts: np.ndarray, stock: np.ndarray) -> None:
        self._capacities = layout.capacities
        self._travel_time = layout.graph.travel_time
        self._forecasts = np.asarray(forecasts, dtype=float)
        self._bans = {}
        self.on_slot(0, stock)

    def on_slot(self, slot: int, stock: np.ndarray) -> None:
        self.inv = compute_targets(
            stock, self._capacities, self._forecasts, slot, self.params.lookahead_slots
        )
        for bans in self._bans.values():
            for station in [s for s, expiry in bans.items() if expiry <= slot]:
                del bans[station]

    def next_task(
        self,
        vehicle_id: int,
        location: int,
        load: int,
        vehicle_capacity: int,
        stock: np.ndarray,
        claimed: frozenset[int],
    ) -> VehicleTask | None:
        return plan_next_task(
            vehicle_id,
            location,
            load,
            vehicle_capacity,
            stock,
            self._capacities,
            self.inv,
            self._travel_time,
            self.params,
            claimed=claimed,
            banned=frozenset(self._bans.get(vehicle_id, {})),
        )

    def on_clipped(self, vehicle_id: int, station: int, slot: int) -> None:
        # a service that moved nothing excludes that station for one slot
        self._bans.setdefault(vehicle_id, {})[station] = slot + 1


class NoOpPolicy:
    """Planner that never issues tasks; the zero-relocation baseline."""

    def begin_day(self, layout, forecasts, stock) -> None:
        pass

    def on_slot(self, slot, stock) -> None:
        pass

    def next_task(self, vehicle_id, location, load, vehicle_capacity, stock, claimed):
        return None

    def on_clipped(self, vehicle_id, station, slot) -> None:
        pass
