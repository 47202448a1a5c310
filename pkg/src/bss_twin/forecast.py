"""Net-demand forecasters: lag baseline, reference-day table, and tree ensembles.

Five families share one interface:

* ``historical_shifted`` — the observed net demand 17472 half-hours (52 weeks)
  earlier.
* ``reference_day``      — per (day type, month, sunny/rainy) cell, copy the
  profile of a designated reference day (the operator rule of thumb).
* ``cart`` / ``random_forest`` / ``gradient_boosting`` — trained on the
  calendar/weather feature schema, either one model over all stations with the
  station id as a feature (``global``) or one model per station (``local``).

Hyperparameter values given as lists form a tuning grid; the grid point with
the lowest validation MSE wins, ties resolved by documented grid order.
Predictions are real-valued throughout; nothing is rounded.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import (
    LAG_52_WEEKS,
    SLOTS_PER_DAY,
    DayContext,
    categorical_mask,
    day_feature_block,
    day_type,
    feature_names,
)
from .pipeline import Dataset, DatasetView
from .trees import GradientBoostingRegressor, RandomForestRegressor, RegressionTree


class Family(str, Enum):
    HISTORICAL_SHIFTED = "historical_shifted"
    REFERENCE_DAY = "reference_day"
    CART = "cart"
    RANDOM_FOREST = "random_forest"
    GRADIENT_BOOSTING = "gradient_boosting"


class Approach(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"


TREE_FAMILIES = (Family.CART, Family.RANDOM_FOREST, Family.GRADIENT_BOOSTING)

# Documented tuning defaults ("light" grids) and the grid expansion order.
DEFAULT_GRIDS: dict[Family, dict[str, list]] = {
    Family.CART: {"max_depth": [4, 6, 8], "min_samples_leaf": [1]},
    Family.RANDOM_FOREST: {"n_estimators": [50, 100, 200], "max_depth": [4, 6, 8]},
    Family.GRADIENT_BOOSTING: {
        "n_estimators": [50, 100, 200],
        "max_depth": [4, 6, 8],
        "learning_rate": [0.05, 0.1],
        "subsample_fraction": [0.8, 1.0],
        "feature_fraction": [0.8, 1.0],
    },
}
GRID_KEY_ORDER: dict[Family, tuple[str, ...]] = {
    Family.CART: ("max_depth", "min_samples_leaf"),
    Family.RANDOM_FOREST: (
        "n_estimators",
        "max_depth",
        "min_samples_leaf",
        "feature_fraction",
        "bootstrap",
        "seed",
    ),
    Family.GRADIENT_BOOSTING: (
        "n_estimators",
        "max_depth",
        "learning_rate",
        "subsample_fraction",
        "feature_fraction",
        "min_samples_leaf",
        "seed",
    ),
}


class ForecastError(ValueError):
    pass


@dataclass
class ModelSpec:
    family: Family
    approach: Approach = Approach.GLOBAL
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        self.family = Family(self.family)
        self.approach = Approach(self.approach)

    @property
    def name(self) -> str:
        if self.family in TREE_FAMILIES:
            return f"{self.family.value}-{self.approach.value}"
        return self.family.value

    def grid(self) -> list[dict]:
        """Concrete parameter dicts in documented order (defaults fill gaps)."""
        if self.family not in TREE_FAMILIES:
            return [{}]
        merged = dict(DEFAULT_GRIDS[self.family])
        merged.update(self.hyperparameters)
        keys = [k for k in GRID_KEY_ORDER[self.family] if k in merged]
        keys += [k for k in merged if k not in keys]
        lists = [merged[k] if isinstance(merged[k], list) else [merged[k]] for k in keys]
        return [dict(zip(keys, combo)) for combo in itertools.product(*lists)]


def mse(pred, actual) -> float:
    """Mean squared error; errors on length mismatch or empty input."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ForecastError(f"length mismatch: {pred.shape} vs {actual.shape}")
    if pred.size == 0:
        raise ForecastError("mse of empty series")
    diff = actual - pred
    return float(np.mean(diff * diff))


def pct_gap(value: float, best: float) -> float:
    """Percentage gap of ``value`` with respect to the best (lowest) value."""
    if best <= 0:
        raise ForecastError(f"pct_gap requires best > 0, got {best}")
    return 100.0 * (value - best) / best


def _as_view(data) -> DatasetView:
    if isinstance(data, Dataset):
        return data.view(None)
    if isinstance(data, DatasetView):
        return data
    raise TypeError(f"expected Dataset or DatasetView, got {type(data)!r}")


class HistoricalShiftedModel:
    """Prediction = the observed net demand 52 weeks (17472 slots) earlier."""

    lag = LAG_52_WEEKS

    def __init__(self, spec: ModelSpec, history: np.ndarray):
        self.spec = spec
        self.history = np.asarray(history, dtype=float)

    @property
    def n_stations(self) -> int:
        return self.history.shape[0]

    def predict_point(self, x, station: int, h: int) -> float:
        lagged = h - self.lag
        if lagged < 0 or lagged >= self.history.shape[1]:
            raise ForecastError(f"insufficient history: slot {h} needs slot {lagged}")
        return float(self.history[station, lagged])

    def predict_view(self, data) -> np.ndarray:
        """Row-aligned predictions; NaN where the 52-week lag is unavailable."""
        view = _as_view(data)
        hh = view.hh_indices()
        lagged = hh - self.lag
        ok = lagged >= 0
        out = np.full((view.n_stations, len(hh)), np.nan)
        out[:, ok] = self.history[:, lagged[ok]]
        return out.reshape(-1)

    def predict_day(self, ctx: DayContext, day_start_hh: int) -> np.ndarray:
        lo = day_start_hh - self.lag
        if lo < 0:
            raise ForecastError(f"insufficient history for day starting at slot {day_start_hh}")
        return self.history[:, lo : lo + SLOTS_PER_DAY].copy()

    def state_dict(self) -> dict:
        return {"history": self.history.tolist()}


_DAY_TYPE_NAMES = {0: "working", 1: "saturday", 2: "sunday"}


class ReferenceDayModel:
    """Copies per-station half-hour profiles of one reference day per cell.

    Cells are (day type, month, rainy?).  When several days fall in a cell the
    reference is the day whose total event count is closest to the cell
    median (ties: earliest date).  With ``fill_missing`` unseen cells borrow
    deterministically from the nearest populated cell; otherwise they error.
    """

    def __init__(self, spec: ModelSpec, profiles: dict, n_stations: int, filled: dict | None = None):
        self.spec = spec
        self.profiles = profiles  # (day_type, month, rainy) -> (n_stations, 48) array
        self.n_stations = n_stations
        self.filled = filled or {}

    @staticmethod
    def cell_of(ctx: DayContext) -> tuple[int, int, int]:
        return (ctx.day_type, ctx.month, int(ctx.rain))

    def _lookup(self, cell):
        if cell in self.profiles:
            return self.profiles[cell]
        raise ForecastError(
            f"no reference day for (day_type={_DAY_TYPE_NAMES[cell[0]]}, "
            f"month={cell[1]}, {'rainy' if cell[2] else 'sunny'})"
        )

    def predict_cell(self, cell, station: int, slot: int) -> float:
        return float(self._lookup(cell)[station, slot])

    def predict_reference_day(self, ctx: DayContext, station: int, slot: int) -> float:
        """Stored profile value of the cell's reference day for (station, slot)."""
        return self.predict_cell(self.cell_of(ctx), station, slot)

    def predict_point(self, x, station: int, h: int) -> float:
        # the feature row carries slot, day-of-week, month and the rain flag
        names = feature_names(self.spec.approach.value)
        row = dict(zip(names, np.asarray(x, dtype=float)))
        cell = (day_type(int(row["day_of_week"])), int(row["month"]), int(row["rain"]))
        return self.predict_cell(cell, station, int(row["slot_of_day"]))

    def predict_day(self, ctx: DayContext, day_start_hh: int = 0) -> np.ndarray:
        return self._lookup(self.cell_of(ctx)).copy()

    def predict_view(self, data) -> np.ndarray:
        view = _as_view(data)
        blocks = [self.predict_day(ctx) for ctx in view.contexts]
        if not blocks:
            return np.empty(0)
        return np.concatenate(blocks, axis=1).reshape(-1)

    def state_dict(self) -> dict:
        return {
            "n_stations": self.n_stations,
            "cells": [
                {"cell": list(cell), "profile": prof.tolist()}
                for cell, prof in sorted(self.profiles.items())
            ],
            "filled": [list(c) for c in sorted(self.filled)],
        }


class TreeEnsembleModel:
    """Global (one estimator) or local (per-station estimators) tree model."""

    def __init__(self, spec: ModelSpec, params: dict, estimators, n_stations: int):
        self.spec = spec
        self.params = params
        self.estimators = estimators  # [est] for global, [est per station] for local
        self.n_stations = n_stations

    @property
    def approach(self) -> Approach:
        return self.spec.approach

    def predict_point(self, x, station: int, h: int) -> float:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        est = self.estimators[0] if self.approach is Approach.GLOBAL else self.estimators[station]
        return float(est.predict(x)[0])

    def predict_view(self, data) -> np.ndarray:
        view = _as_view(data)
        if self.approach is Approach.GLOBAL:
            return self.estimators[0].predict(view.features("global"))
        parts = [
            self.estimators[s].predict(view.features("local", station=s))
            for s in range(view.n_stations)
        ]
        return np.concatenate(parts)

    def predict_day(self, ctx: DayContext, day_start_hh: int = 0) -> np.ndarray:
        out = np.empty((self.n_stations, SLOTS_PER_DAY))
        if self.approach is Approach.GLOBAL:
            for s in range(self.n_stations):
                out[s] = self.estimators[0].predict(day_feature_block(ctx, station=s))
        else:
            block = day_feature_block(ctx)
            for s in range(self.n_stations):
                out[s] = self.estimators[s].predict(block)
        return out

    def split_counts(self) -> np.ndarray:
        return np.array([est.split_counts() for est in self.estimators])


def _fit_estimator(family: Family, params: dict, X, y, cat):
    if family is Family.CART:
        return RegressionTree(
            max_depth=params.get("max_depth", 6),
            min_samples_leaf=params.get("min_samples_leaf", 1),
        ).fit(X, y, cat)
    if family is Family.RANDOM_FOREST:
        return RandomForestRegressor(
            n_estimators=params.get("n_estimators", 100),
            max_depth=params.get("max_depth", 6),
            min_samples_leaf=params.get("min_samples_leaf", 1),
            feature_fraction=params.get("feature_fraction", 1.0),
            bootstrap=params.get("bootstrap", True),
            seed=params.get("seed", 0),
        ).fit(X, y, cat)
    if family is Family.GRADIENT_BOOSTING:
        return GradientBoostingRegressor(
            n_estimators=params.get("n_estimators", 100),
            learning_rate=params.get("learning_rate", 0.1),
            max_depth=params.get("max_depth", 6),
            min_samples_leaf=params.get("min_samples_leaf", 1),
            subsample_fraction=params.get("subsample_fraction", 1.0),
            feature_fraction=params.get("feature_fraction", 1.0),
            seed=params.get("seed", 0),
        ).fit(X, y, cat)
    raise ForecastError(f"not a tree family: {family}")


def _fit_tree_model(spec: ModelSpec, params: dict, train: DatasetView) -> TreeEnsembleModel:
    names = feature_names(spec.approach.value)
    cat = categorical_mask(names)
    if spec.approach is Approach.GLOBAL:
        X = train.features("global")
        y = train.targets()
        est = _fit_estimator(spec.family, params, X, y, cat)
        return TreeEnsembleModel(spec, params, [est], train.n_stations)
    estimators = []
    for s in range(train.n_stations):
        X = train.features("local", station=s)
        y = train.targets(station=s)
        if len(y) == 0:
            raise ForecastError(f"local fit: station {s} has no training rows")
        estimators.append(_fit_estimator(spec.family, params, X, y, cat))
    return TreeEnsembleModel(spec, params, estimators, train.n_stations)


def _fit_reference_day(spec: ModelSpec, train: DatasetView, fill_missing: bool) -> ReferenceDayModel:
    base = train.base
    day_idx = train.day_idx
    if len(day_idx) == 0:
        raise ForecastError("reference-day fit: no days in training view")
    by_cell: dict[tuple, list[int]] = {}
    for d in day_idx:
        by_cell.setdefault(ReferenceDayModel.cell_of(base.contexts[d]), []).append(int(d))
    # day activity = total withdrawals + returns over all stations that day
    profiles: dict[tuple, np.ndarray] = {}
    for cell, days in by_cell.items():
        acts = []
        for d in days:
            lo = d * SLOTS_PER_DAY
            acts.append(
                int(base.withdrawals[:, lo : lo + SLOTS_PER_DAY].sum())
                + int(base.returns[:, lo : lo + SLOTS_PER_DAY].sum())
            )
        median = float(np.median(acts))
        ref = min(zip(days, acts), key=lambda p: (abs(p[1] - median), p[0]))[0]
        profiles[cell] = base.day_net(ref).astype(float)
    filled = {}
    if fill_missing:
        for dtype in (0, 1, 2):
            for month in range(1, 13):
                for rainy in (0, 1):
                    cell = (dtype, month, rainy)
                    if cell in profiles:
                        continue
                    donor = _nearest_cell(profiles, cell)
                    if donor is not None:
                        filled[cell] = donor
        for cell, donor in filled.items():
            profiles[cell] = profiles[donor]
    return ReferenceDayModel(spec, profiles, base.n_stations, filled)


def _nearest_cell(profiles: dict, cell: tuple) -> tuple | None:
    dtype, month, rainy = cell
    candidates = [c for c in profiles if c[0] == dtype]
    if not candidates:
        candidates = list(profiles)
    if not candidates:
        return None
    def month_dist(m1, m2):
        d = abs(m1 - m2)
        return min(d, 12 - d)
    return min(candidates, key=lambda c: (month_dist(c[1], month), c[2] != rainy, c))


def fit(spec: ModelSpec, train, valid=None, fill_missing_cells: bool = False):
    """Fit a model; with a hyperparameter grid, select by validation MSE.

    ``train``/``valid`` are Datasets or DatasetViews.  Historical-shifted
    models keep the whole net-demand history of the training data's base
    dataset (they are lag lookups, not trained estimators).
    """
    train = _as_view(train)
    if train.n_days == 0:
        raise ForecastError("training view is empty")
    if spec.family is Family.HISTORICAL_SHIFTED:
        return HistoricalShiftedModel(spec, train.base.net)
    if spec.family is Family.REFERENCE_DAY:
        return _fit_reference_day(spec, train, fill_missing_cells)
    grid = spec.grid()
    if len(grid) == 1:
        return _fit_tree_model(spec, grid[0], train)
    if valid is None:
        raise ForecastError("hyperparameter grid given but no validation data")
    valid = _as_view(valid)
    if valid.n_days == 0:
        raise ForecastError("validation view is empty")
    actual = valid.targets()
    best_model = None
    best_score = np.inf
    for params in grid:
        model = _fit_tree_model(spec, params, train)
        score = mse(model.predict_view(valid), actual)
        if score < best_score:
            best_score, best_model = score, model
    return best_model


@dataclass
class EvalResult:
    mse: float
    n: int
    n_excluded: int = 0


def evaluate(model, data) -> EvalResult:
    """MSE of a model over a view; slots without lag history are excluded."""
    view = _as_view(data)
    pred = model.predict_view(view)
    actual = view.targets()
    ok = ~np.isnan(pred)
    n_excluded = int((~ok).sum())
    if not ok.any():
        raise ForecastError("no evaluable rows (insufficient history everywhere)")
    return EvalResult(mse(pred[ok], actual[ok]), int(ok.sum()), n_excluded)


@dataclass
class ImportanceReport:
    """Split-count feature importance, normalized to sum 1 per model."""

    feature_names: tuple[str, ...]
    shares: np.ndarray | None = None       # global: (n_features,)
    per_station: np.ndarray | None = None  # local: (n_stations, n_features)

    def distribution(self) -> dict[str, tuple[float, float, float, float, float]]:
        """Box-plot statistics of per-station shares (local models)."""
        if self.per_station is None:
            raise ForecastError("distribution requires a local model report")
        out = {}
        q = np.percentile(self.per_station, [0, 25, 50, 75, 100], axis=0)
        for j, name in enumerate(self.feature_names):
            out[name] = tuple(float(q[i, j]) for i in range(5))
        return out


def feature_importance(model) -> ImportanceReport:
    if not isinstance(model, TreeEnsembleModel):
        raise ForecastError(f"feature importance requires a tree model, got {type(model).__name__}")
    names = feature_names(model.spec.approach.value)
    counts = model.split_counts().astype(float)
    totals = counts.sum(axis=1, keepdims=True)
    shares = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    if model.approach is Approach.GLOBAL:
        return ImportanceReport(names, shares=shares[0])
    return ImportanceReport(names, per_station=shares)


# -- serialization ----------------------------------------------------------

def save_model(model, path) -> None:
    spec = model.spec
    doc = {
        "format": "bss-twin-model",
        "version": 1,
        "spec": {
            "family": spec.family.value,
            "approach": spec.approach.value,
            "hyperparameters": spec.hyperparameters,
        },
    }
    if isinstance(model, TreeEnsembleModel):
        doc["params"] = model.params
        doc["n_stations"] = model.n_stations
        doc["state"] = [_estimator_to_dict(est) for est in model.estimators]
    elif isinstance(model, (HistoricalShiftedModel, ReferenceDayModel)):
        doc["state"] = model.state_dict()
    else:
        raise ForecastError(f"cannot serialize {type(model).__name__}")
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "bss-twin-model":
        raise ForecastError(f"{path} is not a model file")
    spec = ModelSpec(
        family=doc["spec"]["family"],
        approach=doc["spec"]["approach"],
        hyperparameters=doc["spec"]["hyperparameters"],
    )
    if spec.family is Family.HISTORICAL_SHIFTED:
        return HistoricalShiftedModel(spec, np.array(doc["state"]["history"], dtype=float))
    if spec.family is Family.REFERENCE_DAY:
        profiles = {
            tuple(entry["cell"]): np.array(entry["profile"], dtype=float)
            for entry in doc["state"]["cells"]
        }
        filled = {tuple(c): None for c in doc["state"].get("filled", [])}
        return ReferenceDayModel(spec, profiles, doc["state"]["n_stations"], filled)
    estimators = [_estimator_from_dict(spec.family, d) for d in doc["state"]]
    return TreeEnsembleModel(spec, doc["params"], estimators, doc["n_stations"])


def _estimator_to_dict(est) -> dict:
    if isinstance(est, RegressionTree):
        return {"kind": "tree", "tree": est.to_dict()}
    if isinstance(est, RandomForestRegressor):
        return {"kind": "forest", "trees": [t.to_dict() for t in est.trees_]}
    if isinstance(est, GradientBoostingRegressor):
        return {
            "kind": "boosting",
            "base_score": est.base_score_,
            "learning_rate": est.learning_rate,
            "trees": [t.to_dict() for t in est.trees_],
        }
    raise ForecastError(f"unknown estimator {type(est).__name__}")


def _estimator_from_dict(family: Family, data: dict):
    if data["kind"] == "tree":
        return RegressionTree.from_dict(data["tree"])
    if data["kind"] == "forest":
        forest = RandomForestRegressor()
        forest.trees_ = [RegressionTree.from_dict(t) for t in data["trees"]]
        return forest
    if data["kind"] == "boosting":
        boost = GradientBoostingRegressor(learning_rate=data["learning_rate"])
        boost.base_score_ = data["base_score"]
        boost.trees_ = [RegressionTree.from_dict(t) for t in data["trees"]]
        return boost
    raise ForecastError(f"unknown estimator kind {data['kind']!r}")


# -- forecast csv (simulator food; also the external-model entry point) -----

def write_forecast_csv(path, predictions: np.ndarray, first_hh: int) -> None:
    """Rows ``station,hh_index,prediction`` for an (n_stations, n_slots) matrix."""
    predictions = np.asarray(predictions)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station", "hh_index", "prediction"])
        for s in range(predictions.shape[0]):
            for j in range(predictions.shape[1]):
                writer.writerow([s, first_hh + j, repr(float(predictions[s, j]))])


def read_forecast_csv(path) -> dict[tuple[int, int], float]:
    out: dict[tuple[int, int], float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[(int(row["station"]), int(row["hh_index"]))] = float(row["prediction"])
    return out


def forecast_matrix_for_day(table: dict, n_stations: int, day_start_hh: int) -> np.ndarray:
    """Assemble one day's (n_stations, 48) forecast from a forecast.csv table."""
    out = np.empty((n_stations, SLOTS_PER_DAY))
    for s in range(n_stations):
        for j in range(SLOTS_PER_DAY):
            key = (s, day_start_hh + j)
            if key not in table:
                raise ForecastError(f"forecast table missing station {s} slot {day_start_hh + j}")
            out[s, j] = table[key]
    return out
