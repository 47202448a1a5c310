"""Station-based bike-sharing digital twin.

Builds half-hour net-demand datasets, trains global/local forecasters, and
simulates daily trips with forecast-driven dynamic bike relocation.
"""

from .core import (
    DayContext,
    Fleet,
    Layout,
    Shift,
    Station,
    TravelGraph,
    Vehicle,
    hh_index,
    slot_of_day,
    validate_layout,
)
from .engine import DayKpi, KpiCounters, aggregate_kpis, simulate_day
from .forecast import (
    Approach,
    Family,
    ModelSpec,
    evaluate,
    feature_importance,
    fit,
    load_model,
    mse,
    pct_gap,
    save_model,
)
from .pipeline import Dataset, TripRecord, aggregate, ingest_trip_log
from .relocation import GreedyTargetPolicy, NoOpPolicy, PolicyParams, compute_targets
from .scenario import (
    ODModel,
    RateProfile,
    Scenario,
    TripEvent,
    fit_rates,
    replay_scenario,
    sample_scenario,
)

__version__ = "0.1.0"
