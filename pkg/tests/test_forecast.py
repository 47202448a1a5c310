import datetime as dt

import numpy as np
import pytest

from bss_twin.core import SLOTS_PER_DAY, DayContext
from bss_twin.forecast import (
    Approach,
    Family,
    ForecastError,
    ModelSpec,
    evaluate,
    feature_importance,
    fit,
    forecast_matrix_for_day,
    load_model,
    mse,
    pct_gap,
    read_forecast_csv,
    save_model,
    write_forecast_csv,
)
from bss_twin.trees import RegressionTree

from conftest import build_contexts, dataset_from_net, slot_signal_net

EPOCH = dt.date(2015, 1, 1)


class TestMse:
    def test_perfect(self):
        assert mse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_hand_arithmetic(self):
        assert mse([1.0, -1.0], [0.0, 0.0]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ForecastError, match="length mismatch"):
            mse([1.0], [1.0, 2.0])

    def test_against_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        pred = rng.normal(0, 2, 500)
        actual = rng.normal(0, 2, 500)
        # independent two-pass accumulation
        total = 0.0
        for p, a in zip(pred.tolist(), actual.tolist()):
            total += (a - p) ** 2
        assert mse(pred, actual) == pytest.approx(total / 500, rel=1e-12)


class TestAffineRankingInvariance:
    def test_mse_ranking_stable_under_affine_rescaling(self):
        rng = np.random.default_rng(3)
        actual = rng.normal(0, 2, 400)
        model_preds = [actual + rng.normal(0, s, 400) for s in (0.3, 0.8, 1.5)]
        base = [mse(p, actual) for p in model_preds]
        a, b = 3.7, -2.0
        rescaled = [mse(a * p + b, a * actual + b) for p in model_preds]
        assert np.argsort(base).tolist() == np.argsort(rescaled).tolist()
        for m0, m1 in zip(base, rescaled):
            assert m1 == pytest.approx(a * a * m0, rel=1e-9)


class TestPredictPoint:
    def test_tree_point_matches_batch(self, small_dataset):
        view = small_dataset.view("train")
        for approach in (Approach.GLOBAL, Approach.LOCAL):
            spec = ModelSpec(Family.CART, approach, {"max_depth": 3, "min_samples_leaf": 1})
            model = fit(spec, view)
            station = 1
            X = view.features(approach.value, station=None if approach is Approach.GLOBAL else station)
            batch = model.predict_view(view)
            if approach is Approach.GLOBAL:
                row_idx = station * view.n_days * SLOTS_PER_DAY + 7
                row = X[row_idx]
            else:
                row_idx = 7
                row = X[row_idx]
                batch = model.estimators[station].predict(X)
            assert model.predict_point(row, station, 7) == batch[row_idx]

    def test_reference_day_point_uses_feature_row(self, small_dataset):
        model = fit(ModelSpec(Family.REFERENCE_DAY), small_dataset)
        ctx = small_dataset.contexts[8]
        from bss_twin.core import day_feature_block

        row = day_feature_block(ctx)[13]
        expected = model.predict_day(ctx)[2, 13]
        assert model.predict_point(row, 2, 13) == expected


class TestPctGap:
    def test_zero_gap(self):
        assert pct_gap(1.067, 1.067) == 0.0

    def test_printed_table_values(self):
        assert pct_gap(2.023, 1.067) == pytest.approx(89.60, abs=0.05)
        assert pct_gap(2.115, 1.067) == pytest.approx(98.22, abs=0.05)

    def test_nonpositive_best_rejected(self):
        with pytest.raises(ForecastError):
            pct_gap(1.0, 0.0)

    def test_strictly_increasing_in_value(self):
        assert pct_gap(2.0, 1.0) < pct_gap(2.5, 1.0)


class TestHistoricalShifted:
    def make_periodic_dataset(self, n_stations=3, n_days=730):
        contexts = build_contexts(EPOCH, n_days, seed=1)
        rng = np.random.default_rng(2)
        base = rng.integers(-3, 4, size=(n_stations, 364 * SLOTS_PER_DAY))
        reps = int(np.ceil(n_days / 364))
        net = np.tile(base, reps)[:, : n_days * SLOTS_PER_DAY]
        return dataset_from_net(net, contexts)

    def test_prediction_is_lagged_observation(self):
        ds = self.make_periodic_dataset()
        model = fit(ModelSpec(Family.HISTORICAL_SHIFTED), ds)
        h = 17472 + 1234
        assert model.predict_point(None, 1, h) == ds.net[1, h - 17472]

    def test_missing_lag_errors(self):
        ds = self.make_periodic_dataset(n_days=400)
        model = fit(ModelSpec(Family.HISTORICAL_SHIFTED), ds)
        with pytest.raises(ForecastError, match="insufficient history"):
            model.predict_point(None, 0, 100)

    def test_zero_mse_on_periodic_data(self):
        ds = self.make_periodic_dataset().split_by_year({2015: "train", 2016: "test"})
        model = fit(ModelSpec(Family.HISTORICAL_SHIFTED), ds)
        result = evaluate(model, ds.view("test"))
        assert result.mse == 0.0
        assert result.n_excluded == 0  # all of year 2 has full lag coverage

    def test_early_slots_excluded_and_counted(self):
        ds = self.make_periodic_dataset(n_days=400)
        model = fit(ModelSpec(Family.HISTORICAL_SHIFTED), ds)
        result = evaluate(model, ds)
        assert result.n_excluded == ds.n_stations * 364 * SLOTS_PER_DAY


class TestReferenceDay:
    def make_dataset(self, n_days=365):
        contexts = build_contexts(EPOCH, n_days, seed=7)
        rng = np.random.default_rng(8)
        net = rng.integers(-2, 3, size=(2, n_days * SLOTS_PER_DAY))
        return dataset_from_net(net, contexts)

    def test_profile_copied_from_reference_day(self):
        ds = self.make_dataset()
        model = fit(ModelSpec(Family.REFERENCE_DAY), ds)
        # find a (working, May, sunny) day and check the profile comes from the table
        cell = (0, 5, 0)
        assert cell in model.profiles
        ctx = next(
            c for c in ds.contexts if c.day_type == 0 and c.month == 5 and not c.rain
        )
        pred = model.predict_day(ctx)
        assert np.array_equal(pred, model.profiles[cell])

    def test_same_cell_days_share_profiles(self):
        ds = self.make_dataset()
        model = fit(ModelSpec(Family.REFERENCE_DAY), ds)
        same = [c for c in ds.contexts if c.day_type == 0 and c.month == 5 and not c.rain]
        assert len(same) >= 2
        a = model.predict_day(same[0])
        b = model.predict_day(same[1])
        assert np.array_equal(a, b)

    def test_missing_month_errors(self):
        ds = self.make_dataset(n_days=60)  # January + February only
        model = fit(ModelSpec(Family.REFERENCE_DAY), ds)
        july = DayContext.build(dt.date(2015, 7, 1), EPOCH)
        with pytest.raises(ForecastError, match="month=7"):
            model.predict_day(july)

    def test_predict_reference_day_point(self):
        ds = self.make_dataset()
        model = fit(ModelSpec(Family.REFERENCE_DAY), ds)
        ctx = next(c for c in ds.contexts if c.day_type == 0 and c.month == 5 and not c.rain)
        assert model.predict_reference_day(ctx, 1, 20) == model.predict_day(ctx)[1, 20]

    def test_fill_missing_borrows_nearest_cell(self):
        ds = self.make_dataset(n_days=60)
        model = fit(ModelSpec(Family.REFERENCE_DAY), ds, fill_missing_cells=True)
        july = DayContext.build(dt.date(2015, 7, 1), EPOCH)
        assert model.predict_day(july).shape == (2, 48)
        assert (0, 7, 0) in model.filled

    def test_reference_day_closest_to_median_activity(self):
        # three Mondays in January, sunny; activity 10, 30, 80 -> median 30
        contexts = []
        for i, day in enumerate((5, 12, 19)):  # 2015-01-05/12/19 are Mondays
            contexts.append(DayContext.build(dt.date(2015, 1, day), dt.date(2015, 1, 5)))
        # pad to contiguity: use the actual dates as a 15-day range instead
        epoch = dt.date(2015, 1, 5)
        contexts = build_contexts(epoch, 15, seed=11)
        contexts = [
            DayContext.build(c.date, epoch, avg_temperature=c.avg_temperature, rain=False)
            for c in contexts
        ]
        n_days = len(contexts)
        net = np.zeros((1, n_days * SLOTS_PER_DAY), dtype=np.int64)
        mondays = [i for i, c in enumerate(contexts) if c.day_of_week == 0]
        activity = {mondays[0]: 10, mondays[1]: 30, mondays[2]: 80}
        for day, total in activity.items():
            net[0, day * SLOTS_PER_DAY : day * SLOTS_PER_DAY + total] = -1
        ds = dataset_from_net(net, contexts)
        model = fit(ModelSpec(Family.REFERENCE_DAY), ds)
        expected = ds.day_net(mondays[1]).astype(float)
        got = model.profiles[(0, 1, 0)]
        # reference day must be the activity-30 Monday unless another working
        # sunny January day is closer to the cell median; check via direct rule
        days = [i for i, c in enumerate(contexts) if c.day_type == 0 and not c.rain]
        acts = [int(-ds.net[:, d * 48 : (d + 1) * 48].clip(max=0).sum()) for d in days]
        median = float(np.median(acts))
        ref = min(zip(days, acts), key=lambda p: (abs(p[1] - median), p[0]))[0]
        assert np.array_equal(got, ds.day_net(ref).astype(float))


class TestTreeModels:
    def test_cart_depth_zero_grid_predicts_mean(self, small_dataset):
        view = small_dataset.view("train")
        spec = ModelSpec(Family.CART, Approach.GLOBAL, {"max_depth": 0, "min_samples_leaf": 1})
        model = fit(spec, view)
        pred = model.predict_view(view)
        assert np.allclose(pred, view.targets().mean())

    def test_boosting_zero_estimators_constant(self, small_dataset):
        view = small_dataset.view("train")
        spec = ModelSpec(
            Family.GRADIENT_BOOSTING,
            Approach.GLOBAL,
            {"n_estimators": 0, "max_depth": 4, "learning_rate": 0.1,
             "subsample_fraction": 1.0, "feature_fraction": 1.0},
        )
        model = fit(spec, view)
        assert np.allclose(model.predict_view(view), view.targets().mean())

    def test_forest_single_tree_equals_cart(self, small_dataset):
        view = small_dataset.view("train")
        rf_spec = ModelSpec(
            Family.RANDOM_FOREST,
            Approach.GLOBAL,
            {"n_estimators": 1, "max_depth": 5, "feature_fraction": 1.0,
             "bootstrap": False, "min_samples_leaf": 1},
        )
        cart_spec = ModelSpec(Family.CART, Approach.GLOBAL, {"max_depth": 5, "min_samples_leaf": 1})
        rf = fit(rf_spec, view)
        cart = fit(cart_spec, view)
        assert np.array_equal(rf.predict_view(view), cart.predict_view(view))

    def test_local_and_global_prediction_shapes(self, small_dataset):
        view = small_dataset.view("train")
        n_rows = view.n_stations * view.n_days * SLOTS_PER_DAY
        for approach in (Approach.GLOBAL, Approach.LOCAL):
            spec = ModelSpec(Family.CART, approach, {"max_depth": 3, "min_samples_leaf": 1})
            model = fit(spec, view)
            assert model.predict_view(view).shape == (n_rows,)
            ctx = view.contexts[0]
            assert model.predict_day(ctx).shape == (view.n_stations, 48)

    def test_grid_selection_prefers_lower_validation_mse(self):
        contexts = build_contexts(EPOCH, 40, seed=21)
        net = slot_signal_net(2, contexts, amplitude=4)
        ds = dataset_from_net(net, contexts)
        train = ds.view(None)
        # depth 0 cannot express the slot signal; depth 6 can
        spec = ModelSpec(Family.CART, Approach.GLOBAL, {"max_depth": [0, 6], "min_samples_leaf": 1})
        model = fit(spec, train, valid=train)
        assert model.params["max_depth"] == 6

    def test_grid_requires_validation_data(self, small_dataset):
        spec = ModelSpec(Family.CART, Approach.GLOBAL, {"max_depth": [2, 4]})
        with pytest.raises(ForecastError, match="validation"):
            fit(spec, small_dataset.view("train"))

    def test_grid_tie_takes_first_in_documented_order(self, small_dataset):
        view = small_dataset.view("train")
        # identical grid points tie exactly; the first must win
        spec = ModelSpec(Family.CART, Approach.GLOBAL, {"max_depth": [3, 3], "min_samples_leaf": 1})
        model = fit(spec, view, valid=view)
        assert model.params["max_depth"] == 3

    def test_boosted_model_learns_slot_signal(self):
        contexts = build_contexts(EPOCH, 60, seed=23)
        net = slot_signal_net(2, contexts, amplitude=4)
        ds = dataset_from_net(net, contexts)
        spec = ModelSpec(
            Family.GRADIENT_BOOSTING,
            Approach.LOCAL,
            {"n_estimators": 40, "max_depth": 4, "learning_rate": 0.3,
             "subsample_fraction": 1.0, "feature_fraction": 1.0, "seed": 1},
        )
        model = fit(spec, ds)
        result = evaluate(model, ds)
        assert result.mse < 0.05
        report = feature_importance(model)
        mean_shares = report.per_station.mean(axis=0)
        assert report.feature_names[int(np.argmax(mean_shares))] == "slot_of_day"


class TestImportance:
    def test_single_split_share(self):
        rng = np.random.default_rng(1)
        contexts = build_contexts(EPOCH, 10, seed=1)
        net = slot_signal_net(1, contexts, amplitude=2)
        ds = dataset_from_net(net, contexts)
        spec = ModelSpec(Family.CART, Approach.GLOBAL, {"max_depth": 1, "min_samples_leaf": 1})
        model = fit(spec, ds)
        report = feature_importance(model)
        assert report.shares.sum() == pytest.approx(1.0)
        assert (report.shares > 0).sum() == 1

    def test_share_arithmetic_across_trees(self):
        # two trees with split counts {f0: 3} and {f0: 1, f1: 4} -> both shares 0.5
        def chain(feature, depth):
            if depth == 0:
                return {"value": 0.0, "n": 1}
            return {
                "feature": feature,
                "threshold": 0.5,
                "left": {"value": 0.0, "n": 1},
                "right": chain(feature, depth - 1),
                "value": 0.0,
                "n": 2,
            }

        t1 = RegressionTree.from_dict({"n_features": 2, "root": chain(0, 3)})
        mixed = {
            "feature": 0,
            "threshold": 0.5,
            "left": chain(1, 2),
            "right": chain(1, 2),
            "value": 0.0,
            "n": 4,
        }
        t2 = RegressionTree.from_dict({"n_features": 2, "root": mixed})
        counts = t1.split_counts() + t2.split_counts()
        shares = counts / counts.sum()
        assert shares[0] == pytest.approx(0.5) and shares[1] == pytest.approx(0.5)

    def test_non_tree_model_rejected(self, small_dataset):
        model = fit(ModelSpec(Family.HISTORICAL_SHIFTED), small_dataset)
        with pytest.raises(ForecastError, match="tree model"):
            feature_importance(model)

    def test_local_distribution_stats(self, small_dataset):
        spec = ModelSpec(Family.CART, Approach.LOCAL, {"max_depth": 4, "min_samples_leaf": 1})
        model = fit(spec, small_dataset.view("train"))
        report = feature_importance(model)
        dist = report.distribution()
        for name, (lo, q1, med, q3, hi) in dist.items():
            assert lo <= q1 <= med <= q3 <= hi


class TestSerialization:
    @pytest.mark.parametrize(
        "spec",
        [
            ModelSpec(Family.HISTORICAL_SHIFTED),
            ModelSpec(Family.REFERENCE_DAY),
            ModelSpec(Family.CART, Approach.GLOBAL, {"max_depth": 3, "min_samples_leaf": 1}),
            ModelSpec(
                Family.RANDOM_FOREST,
                Approach.LOCAL,
                {"n_estimators": 3, "max_depth": 3, "min_samples_leaf": 1,
                 "feature_fraction": 0.8, "seed": 2},
            ),
            ModelSpec(
                Family.GRADIENT_BOOSTING,
                Approach.GLOBAL,
                {"n_estimators": 5, "max_depth": 3, "learning_rate": 0.1,
                 "subsample_fraction": 0.8, "feature_fraction": 1.0, "seed": 3},
            ),
        ],
        ids=lambda s: s.name,
    )
    def test_round_trip_bit_identical(self, spec, small_dataset, tmp_path):
        view = small_dataset.view("train")
        model = fit(spec, view)
        path = tmp_path / "model.json"
        save_model(model, path)
        clone = load_model(path)
        if spec.family is Family.HISTORICAL_SHIFTED:
            h = 17472 + 5
            # out-of-range history: extend via direct array comparison instead
            assert np.array_equal(model.history, clone.history)
        else:
            a = model.predict_view(view)
            b = clone.predict_view(view)
            assert np.array_equal(a, b)


class TestForecastCsv:
    def test_round_trip_and_day_matrix(self, tmp_path):
        rng = np.random.default_rng(4)
        matrix = rng.normal(0, 1, (3, 96))
        path = tmp_path / "forecast.csv"
        write_forecast_csv(path, matrix, first_hh=480)
        table = read_forecast_csv(path)
        day0 = forecast_matrix_for_day(table, 3, 480)
        day1 = forecast_matrix_for_day(table, 3, 528)
        assert np.array_equal(day0, matrix[:, :48])
        assert np.array_equal(day1, matrix[:, 48:])

    def test_missing_coverage_errors(self, tmp_path):
        path = tmp_path / "forecast.csv"
        write_forecast_csv(path, np.zeros((2, 48)), first_hh=0)
        table = read_forecast_csv(path)
        with pytest.raises(ForecastError, match="missing station"):
            forecast_matrix_for_day(table, 3, 0)
