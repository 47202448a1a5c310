import datetime as dt

import numpy as np
import pytest

from bss_twin.core import DayContext
from bss_twin.pipeline import Dataset

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        outcome = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{name}: {'PASS' if outcome == 'passed' else outcome.upper()}")


def build_contexts(epoch: dt.date, n_days: int, seed: int = 0) -> list[DayContext]:
    """Calendar with seeded day-level weather; rain on roughly a quarter of days."""
    rng = np.random.default_rng(seed)
    contexts = []
    for i in range(n_days):
        date = epoch + dt.timedelta(days=i)
        doy = date.timetuple().tm_yday
        temp = 13.0 - 11.0 * np.cos(2 * np.pi * doy / 365.0) + rng.normal(0, 2.0)
        contexts.append(
            DayContext.build(
                date,
                epoch,
                is_public_holiday=(date.month, date.day) in {(1, 1), (5, 1), (12, 25)},
                is_school_day=not (6 <= date.month <= 8),
                avg_temperature=round(float(temp), 1),
                avg_wind_speed=round(float(rng.uniform(0, 20)), 1),
                fog=bool(rng.random() < 0.05),
                rain=bool(rng.random() < 0.25),
                snow=bool(rng.random() < (0.05 if date.month in (1, 2, 12) else 0.0)),
                storm=bool(rng.random() < 0.02),
            )
        )
    return contexts


def dataset_from_net(net: np.ndarray, contexts: list[DayContext]) -> Dataset:
    """Dataset whose net demand equals ``net`` (returns/withdrawals split by sign)."""
    net = np.asarray(net, dtype=np.int64)
    returns = np.where(net > 0, net, 0)
    withdrawals = np.where(net < 0, -net, 0)
    return Dataset(contexts[0].date, contexts, withdrawals, returns)


def slot_signal_net(n_stations: int, contexts, amplitude: int = 3, seed: int = 0) -> np.ndarray:
    """Integer net demand driven only by the slot of day (plus station offset)."""
    n_days = len(contexts)
    slots = np.arange(48)
    profile = np.rint(amplitude * np.sin(2 * np.pi * slots / 48.0)).astype(np.int64)
    day_block = np.tile(profile, n_days)
    return np.vstack([day_block + (s % 2) for s in range(n_stations)])


@pytest.fixture
def small_dataset():
    epoch = dt.date(2015, 1, 1)
    contexts = build_contexts(epoch, 60, seed=3)
    rng = np.random.default_rng(5)
    net = slot_signal_net(3, contexts) + rng.integers(-1, 2, size=(3, 60 * 48))
    ds = dataset_from_net(net, contexts)
    return ds.split_by_year({2015: "train"})
