import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bss_twin.core import (
    LAG_52_WEEKS,
    DayContext,
    Layout,
    Shift,
    Station,
    TravelGraph,
    Vehicle,
    day_feature_block,
    feature_names,
    hh_index,
    slot_of_day,
    slot_start,
    validate_layout,
)

EPOCH = dt.date(2015, 1, 1)


def test_hh_index_epoch_origin():
    assert hh_index(dt.datetime(2015, 1, 1, 0, 0, 0), EPOCH) == 0


def test_hh_index_bin_boundary():
    assert hh_index(dt.datetime(2015, 1, 1, 0, 29, 59), EPOCH) == 0
    assert hh_index(dt.datetime(2015, 1, 1, 0, 30, 0), EPOCH) == 1


def test_hh_index_52_week_lag():
    t = dt.datetime.combine(EPOCH + dt.timedelta(days=364), dt.time(0, 0))
    assert hh_index(t, EPOCH) == 17472
    assert LAG_52_WEEKS == 17472


def test_hh_index_pre_epoch_rejected():
    with pytest.raises(ValueError, match="pre-epoch"):
        hh_index(dt.datetime(2014, 12, 31, 23, 59), EPOCH)


def test_slot_of_day():
    assert slot_of_day(0) == 0
    assert slot_of_day(49) == 1
    assert slot_of_day(17472) == 0


@given(st.integers(min_value=0, max_value=48 * 5000))
def test_slot_start_round_trip(h):
    assert hh_index(slot_start(h, EPOCH), EPOCH) == h


@given(
    st.integers(min_value=0, max_value=3000),
    st.integers(min_value=0, max_value=86399),
    st.integers(min_value=0, max_value=86399),
)
def test_hh_index_monotone(day, s1, s2):
    lo, hi = sorted((s1, s2))
    t1 = dt.datetime.combine(EPOCH + dt.timedelta(days=day), dt.time()) + dt.timedelta(seconds=lo)
    t2 = dt.datetime.combine(EPOCH + dt.timedelta(days=day), dt.time()) + dt.timedelta(seconds=hi)
    assert hh_index(t1, EPOCH) <= hh_index(t2, EPOCH)


@given(st.dates(min_value=dt.date(2015, 12, 31), max_value=dt.date(2030, 1, 1)))
def test_52_week_lag_property(date):
    t = dt.datetime.combine(date, dt.time(9, 15))
    lagged = t - dt.timedelta(days=364)
    assert hh_index(t, EPOCH) - hh_index(lagged, EPOCH) == 17472


def _square(n, fill=60.0):
    mat = np.full((n, n), fill)
    np.fill_diagonal(mat, 0.0)
    return mat


def make_layout(caps=(10, 10), stocks=(5, 5)):
    stations = [
        Station(id=i, capacity=c, initial_stock=s) for i, (c, s) in enumerate(zip(caps, stocks))
    ]
    n = len(stations)
    return Layout(stations, TravelGraph(_square(n + 1), _square(n + 1, 500.0)))


def test_validate_layout_ok():
    assert validate_layout(make_layout()) == []


def test_validate_layout_stock_exceeds_capacity():
    problems = validate_layout(make_layout(caps=(10, 10), stocks=(11, 5)))
    assert any("stock exceeds capacity at station 0" in p for p in problems)


def test_validate_layout_graph_dimension():
    stations = [Station(id=i, capacity=10, initial_stock=5) for i in range(3)]
    layout = Layout(stations, TravelGraph(_square(3), _square(3)))  # no depot row
    problems = validate_layout(layout)
    assert any("graph dimension" in p for p in problems)


def test_validate_layout_negative_travel_time():
    layout = make_layout()
    layout.graph.travel_time[0, 1] = -1.0
    assert any("negative entries in travel_time" in p for p in validate_layout(layout))


def test_shift_and_vehicle_invariants():
    with pytest.raises(ValueError):
        Shift(3600, 3600)
    with pytest.raises(ValueError):
        Shift(-1, 3600)
    with pytest.raises(ValueError):
        Vehicle(id=0, capacity=0, shift=Shift(0, 3600))


def test_feature_schema_order():
    local = feature_names("local")
    global_ = feature_names("global")
    assert local[0] == "slot_of_day"
    assert "station" not in local
    assert global_.index("station") == 5  # right after week_index
    assert len(global_) == len(local) + 1


def test_day_feature_block_values():
    ctx = DayContext.build(
        dt.date(2015, 3, 4),  # a Wednesday
        EPOCH,
        avg_temperature=9.5,
        avg_wind_speed=12.0,
        rain=True,
    )
    block = day_feature_block(ctx, station=7)
    names = feature_names("global")
    assert block.shape == (48, len(names))
    row = dict(zip(names, block[13]))
    assert row["slot_of_day"] == 13
    assert row["day_of_week"] == 2
    assert row["day_of_month"] == 4
    assert row["month"] == 3
    assert row["week_index"] == (dt.date(2015, 3, 4) - EPOCH).days // 7
    assert row["station"] == 7
    assert row["rain"] == 1.0 and row["snow"] == 0.0
