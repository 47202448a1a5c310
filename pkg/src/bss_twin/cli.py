"""Command-line entry point: dataset build, forecast evaluation, simulation
campaigns, and the morning/afternoon fleet sweep.

    bss-twin build-dataset --config cfg.toml
    bss-twin eval-forecast --config cfg.toml [--seed N] [--out DIR] [--jobs K]
    bss-twin simulate      --config cfg.toml [--seed N] [--out DIR] [--jobs K]
    bss-twin fleet-sweep   --config cfg.toml [--seed N] [--out DIR] [--jobs K]

Exit codes: 0 success, 2 configuration/input validation failure, 1 runtime
error.  Every output is a pure function of (config, seed): reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .core import Fleet, Vehicle, SLOTS_PER_DAY
from .engine import simulate_day
from .forecast import (
    EvalResult,
    Family,
    ForecastError,
    evaluate,
    feature_importance,
    fit,
    forecast_matrix_for_day,
    mse,
    pct_gap,
    read_forecast_csv,
    save_model,
    write_forecast_csv,
)
from .pipeline import (
    DatasetView,
    PipelineError,
    aggregate,
    ingest_trip_log,
    load_day_contexts,
    load_layout,
)
from .relocation import GreedyTargetPolicy, NoOpPolicy
from .reports import (
    format_mse_table,
    format_sweep_matrix,
    write_campaign_report,
    write_error_distribution_csv,
    write_kpi_csv,
    write_mse_csv,
    write_sweep_csv,
)
from .scenario import replay_scenario
from .synth import write_synthetic_inputs

PERFECT = "perfect"
ZERO_VEHICLE = "zero-vehicle"


def run_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _parallel(fn, items, jobs):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (jobs * 4) or 1)))


def load_inputs(cfg: ExperimentConfig):
    """Generate synthetic inputs if configured, then load all input files."""
    if cfg.synthetic is not None:
        write_synthetic_inputs(
            cfg.out_dir / "data",
            n_stations=cfg.synthetic.n_stations,
            start=cfg.synthetic.start,
            end=cfg.synthetic.end,
            seed=cfg.synthetic.seed,
            events_per_station_day=cfg.synthetic.events_per_station_day,
        )
    layout, id_map = load_layout(cfg.paths["layout"], cfg.paths["graph_time"], cfg.paths["graph_dist"])
    report = ingest_trip_log(cfg.paths["trips"], id_map)
    contexts = load_day_contexts(cfg.paths["weather"], cfg.paths["calendar"])
    return layout, report, contexts


def build_dataset(cfg: ExperimentConfig):
    layout, report, contexts = load_inputs(cfg)
    dataset = aggregate(report.trips, layout, contexts)
    if cfg.split:
        dataset = dataset.split_by_year(cfg.split)
    return layout, report, dataset


def _reference_view(cfg, dataset):
    """Days the reference-day model is built from: unused years, else train,
    else the whole dataset."""
    if "unused" in set(cfg.split.values()):
        return dataset.view("unused")
    if cfg.split:
        view = dataset.view("train")
        if view.n_days:
            return view
    return dataset.view(None)


def fit_entry(entry, cfg, dataset):
    """Fit one configured model; external entries load their forecast table."""
    if entry.external_path is not None:
        return ("external", read_forecast_csv(entry.external_path))
    spec = entry.spec
    if spec.family is Family.HISTORICAL_SHIFTED:
        return ("model", fit(spec, dataset.view(None)))
    if spec.family is Family.REFERENCE_DAY:
        return ("model", fit(spec, _reference_view(cfg, dataset), fill_missing_cells=cfg.reference_fill))
    train = dataset.view("train") if cfg.split else dataset.view(None)
    valid = dataset.view("validation") if cfg.split else None
    if valid is not None and valid.n_days == 0:
        valid = None
    return ("model", fit(spec, train, valid))


def day_forecast(kind, fitted, dataset, day_index):
    ctx = dataset.contexts[day_index]
    start_hh = day_index * SLOTS_PER_DAY
    if kind == "external":
        return forecast_matrix_for_day(fitted, dataset.n_stations, start_hh)
    return fitted.predict_day(ctx, start_hh)


# -- build-dataset -------------------------------------------------------------

def cmd_build_dataset(cfg: ExperimentConfig, jobs: int) -> None:
    layout, report, dataset = build_dataset(cfg)
    art_dir = cfg.out_dir / "dataset"
    art_dir.mkdir(parents=True, exist_ok=True)
    with open(art_dir / "withdrawals.npy", "wb") as fh:
        np.save(fh, dataset.withdrawals)
    with open(art_dir / "returns.npy", "wb") as fh:
        np.save(fh, dataset.returns)
    meta = {
        "epoch": dataset.epoch.isoformat(),
        "n_stations": dataset.n_stations,
        "n_days": dataset.n_days,
        "split": {str(y): r for y, r in sorted(dataset.split_plan.items())},
        "rejected_rows": report.rejected,
    }
    (art_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    digest = hashlib.sha256()
    for name in ("meta.json", "withdrawals.npy", "returns.npy"):
        digest.update((art_dir / name).read_bytes())
    (art_dir / "sha256.txt").write_text(digest.hexdigest() + "\n")

    zero_fraction = float(np.mean((dataset.withdrawals == 0) & (dataset.returns == 0)))
    print(f"dataset: {dataset.n_observations} observations "
          f"({dataset.n_stations} stations x {dataset.n_days} days x {SLOTS_PER_DAY} slots)")
    print(f"zero-fill fraction: {zero_fraction:.4f}")
    for role in ("train", "validation", "test", "unused"):
        n = len(dataset.day_indices(role))
        if n:
            print(f"{role}: {n} days")
    if report.rejected:
        print(f"rejected trip rows: {len(report.rejected)} (see dataset/meta.json)")
    print(f"artifact sha256: {digest.hexdigest()}")


# -- eval-forecast ---------------------------------------------------------------

def cmd_eval_forecast(cfg: ExperimentConfig, jobs: int) -> None:
    _, _, dataset = build_dataset(cfg)
    eval_years = sorted(
        {y for y, role in cfg.split.items() if role in ("validation", "test")}
    ) or dataset.years()
    fitted = {}
    for entry in cfg.models:
        fitted[entry.name] = fit_entry(entry, cfg, dataset)

    rows = []
    year_results: dict[int, dict[str, object]] = {}
    for year in eval_years:
        days = np.array([i for i, c in enumerate(dataset.contexts) if c.date.year == year])
        view = DatasetView(dataset, days)
        results = {}
        for name, (kind, model) in fitted.items():
            try:
                if kind == "external":
                    pred = np.concatenate(
                        [day_forecast(kind, model, dataset, d) for d in days], axis=1
                    ).reshape(-1)
                    actual = view.targets()
                    ok = ~np.isnan(pred)
                    results[name] = EvalResult(mse(pred[ok], actual[ok]), int(ok.sum()), int((~ok).sum()))
                else:
                    results[name] = evaluate(model, view)
            except ForecastError:
                # e.g. historical-shifted without 52 weeks of history: mark the row
                results[name] = None
        year_results[year] = results
        scored = [r.mse for r in results.values() if r is not None]
        best = min(scored) if scored else None
        for name, res in results.items():
            if res is None:
                rows.append({"model": name, "year": year, "mse": None, "gap_pct": None,
                             "n": 0, "n_excluded": view.n_rows})
                continue
            if res.mse == best:
                gap = 0.0
            elif best is not None and best > 0:
                gap = pct_gap(res.mse, best)
            else:
                gap = None
            rows.append(
                {"model": name, "year": year, "mse": res.mse, "gap_pct": gap,
                 "n": res.n, "n_excluded": res.n_excluded}
            )

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_mse_csv(cfg.out_dir / "mse.csv", rows)
    table = format_mse_table(rows)
    (cfg.out_dir / "mse.txt").write_text(table)
    print(table, end="")

    # error distributions + forecast export for the best model on the last year
    last_year = eval_years[-1]
    scored_names = [n for n, r in year_results[last_year].items() if r is not None]
    if not scored_names:
        print("no model produced evaluable predictions; skipping distribution export")
        return
    best_name = min(scored_names, key=lambda n: year_results[last_year][n].mse)
    kind, model = fitted[best_name]
    days = [i for i, c in enumerate(dataset.contexts) if c.date.year == last_year]
    preds = np.concatenate(
        [day_forecast(kind, model, dataset, d) for d in days], axis=1
    )
    view = DatasetView(dataset, np.array(days))
    actual = view.targets().reshape(dataset.n_stations, -1)
    ok_cols = ~np.isnan(preds).any(axis=0)
    errors = (preds - actual)[:, ok_cols]
    slots = np.tile(np.arange(SLOTS_PER_DAY), len(days))[ok_cols]
    weekdays_full = np.concatenate(
        [np.full(SLOTS_PER_DAY, dataset.contexts[d].day_of_week) for d in days]
    )[ok_cols]
    write_error_distribution_csv(
        cfg.out_dir / "error_by_slot.csv", errors.reshape(-1),
        np.tile(slots, dataset.n_stations), "slot",
    )
    write_error_distribution_csv(
        cfg.out_dir / "error_by_weekday.csv", errors.reshape(-1),
        np.tile(weekdays_full, dataset.n_stations), "weekday",
    )
    write_forecast_csv(cfg.out_dir / f"forecast_{best_name}.csv", preds, days[0] * SLOTS_PER_DAY)
    if kind == "model" and model.spec.family in (Family.CART, Family.RANDOM_FOREST, Family.GRADIENT_BOOSTING):
        report = feature_importance(model)
        imp_path = cfg.out_dir / "importance.csv"
        with open(imp_path, "w") as fh:
            if report.per_station is not None:
                fh.write("feature,min,q1,median,q3,max\n")
                for name, box in report.distribution().items():
                    fh.write(name + "," + ",".join(f"{v:.4f}" for v in box) + "\n")
            else:
                fh.write("feature,share\n")
                for name, share in zip(report.feature_names, report.shares):
                    fh.write(f"{name},{share:.4f}\n")
        save_model(model, cfg.out_dir / f"model_{best_name}.json")
    print(f"best model ({last_year}): {best_name}")


# -- simulation campaigns --------------------------------------------------------

def _fleet_for_ctx(ctx, groups_weekday, groups_saturday, capacity) -> Fleet:
    if ctx.day_type == 0:
        groups = groups_weekday
    elif ctx.day_type == 1:
        groups = groups_saturday
    else:
        groups = []
    vehicles = []
    for group in groups:
        for _ in range(group.count):
            vehicles.append(Vehicle(id=len(vehicles), capacity=capacity, shift=group.shift))
    return Fleet(vehicles)


def _run_one(args):
    layout, fleet, scenario, forecasts, policy_params, seed, use_noop = args
    policy = NoOpPolicy() if use_noop else GreedyTargetPolicy(policy_params)
    return simulate_day(
        layout, fleet, scenario, policy, forecasts,
        seed=seed, per_bike_service_s=policy_params.per_bike_service_s,
    )


def _campaign_days(cfg, dataset, role, max_days):
    days = list(dataset.day_indices(role) if cfg.split else range(dataset.n_days))
    if max_days is not None:
        days = days[:max_days]
    return days


def cmd_simulate(cfg: ExperimentConfig, jobs: int) -> None:
    layout, report, dataset = build_dataset(cfg)
    days = _campaign_days(cfg, dataset, cfg.simulate.days, cfg.simulate.max_days)
    if not days:
        raise ConfigError(f"no days with role {cfg.simulate.days!r} to simulate")
    scenarios = {
        d: replay_scenario(report.trips, dataset.contexts[d].date, dataset.contexts[d]) for d in days
    }
    runs: dict[str, list] = {}
    fitted = {entry.name: fit_entry(entry, cfg, dataset) for entry in cfg.models}
    names = list(fitted)
    if cfg.simulate.include_perfect:
        names.append(PERFECT)
    if cfg.simulate.include_zero_vehicle:
        names.append(ZERO_VEHICLE)

    items = []
    order = []
    for name in names:
        for d in days:
            ctx = dataset.contexts[d]
            if name == ZERO_VEHICLE:
                fleet = Fleet([])
                forecasts = np.zeros((dataset.n_stations, SLOTS_PER_DAY))
                use_noop = True
            else:
                fleet = _fleet_for_ctx(ctx, cfg.fleet.weekday, cfg.fleet.saturday, cfg.fleet.vehicle_capacity)
                forecasts = (
                    dataset.day_net(d).astype(float)
                    if name == PERFECT
                    else day_forecast(*fitted[name], dataset, d)
                )
                use_noop = False
            items.append(
                (layout, fleet, scenarios[d], forecasts, cfg.policy, run_seed(cfg.seed, d), use_noop)
            )
            order.append((name, d))
    results = _parallel(_run_one, items, jobs)
    for (name, _), kpi in zip(order, results):
        runs.setdefault(name, []).append(kpi)

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for name, kpis in runs.items():
        write_kpi_csv(cfg.out_dir / f"kpi_{name}.csv", kpis, per_slot=cfg.simulate.per_slot_series)
    baseline = cfg.simulate.baseline if cfg.simulate.baseline in runs else None
    write_campaign_report(cfg.out_dir / "campaign.txt", runs, baseline)
    print((cfg.out_dir / "campaign.txt").read_text(), end="")


def cmd_fleet_sweep(cfg: ExperimentConfig, jobs: int) -> None:
    layout, report, dataset = build_dataset(cfg)
    days = _campaign_days(cfg, dataset, cfg.sweep.days, cfg.sweep.max_days)
    if not days:
        raise ConfigError(f"no days with role {cfg.sweep.days!r} to sweep")
    scenarios = {
        d: replay_scenario(report.trips, dataset.contexts[d].date, dataset.contexts[d]) for d in days
    }
    sweep_names = cfg.sweep.models if cfg.sweep.models is not None else [e.name for e in cfg.models]
    forecasts_by_model: dict[str, dict[int, np.ndarray]] = {}
    for name in sweep_names:
        if name == PERFECT:
            forecasts_by_model[name] = {d: dataset.day_net(d).astype(float) for d in days}
            continue
        entry = next((e for e in cfg.models if e.name == name), None)
        if entry is None:
            raise ConfigError(f"[sweep] model {name!r} is not in [[models]]")
        kind_model = fit_entry(entry, cfg, dataset)
        forecasts_by_model[name] = {d: day_forecast(*kind_model, dataset, d) for d in days}

    from .config import ShiftGroup

    cells = [
        (m, a)
        for m in range(cfg.sweep.max_fleet + 1)
        for a in range(cfg.sweep.max_fleet + 1 - m)
    ]
    fleets: dict[tuple[int, int, int], Fleet] = {}
    for (m, a) in cells:
        weekday = []
        if m:
            weekday.append(ShiftGroup(cfg.sweep.morning, m))
        if a:
            weekday.append(ShiftGroup(cfg.sweep.afternoon, a))
        saturday = [ShiftGroup(cfg.sweep.saturday_morning, 1)] if m >= 1 else []
        for d in days:
            ctx = dataset.contexts[d]
            fleets[(m, a, d)] = _fleet_for_ctx(ctx, weekday, saturday, cfg.fleet.vehicle_capacity)

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for name in sweep_names:
        items = []
        order = []
        for (m, a) in cells:
            for d in days:
                # the per-run seed depends only on (seed, m, a, day): adding
                # cells or models never perturbs existing cells' results
                items.append(
                    (layout, fleets[(m, a, d)], scenarios[d], forecasts_by_model[name][d],
                     cfg.policy, run_seed(cfg.seed, m, a, d), False)
                )
                order.append(((m, a), d))
        results = _parallel(_run_one, items, jobs)
        by_cell: dict[tuple[int, int], list] = {}
        for (cell, _), kpi in zip(order, results):
            by_cell.setdefault(cell, []).append(kpi)
        matrix = {}
        for cell, kpis in by_cell.items():
            kept = [k for k in kpis if not k.ctx.is_sunday]
            matrix[cell] = float(np.mean([k.counters.total_missed for k in kept])) if kept else float("nan")
        write_sweep_csv(cfg.out_dir / f"sweep_{name}.csv", matrix, cfg.sweep.max_fleet)
        text = format_sweep_matrix(matrix, cfg.sweep.max_fleet)
        (cfg.out_dir / f"sweep_{name}.txt").write_text(text)
        print(f"fleet sweep under {name} forecasts "
              f"(mean daily missed requests, relocation days, {len(days)} days):")
        print(text, end="")


# -- entry point -------------------------------------------------------------------

COMMANDS = {
    "build-dataset": cmd_build_dataset,
    "eval-forecast": cmd_eval_forecast,
    "simulate": cmd_simulate,
    "fleet-sweep": cmd_fleet_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bss-twin",
        description="Bike-sharing digital twin: forecasting and relocation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="TOML experiment configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the config output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel simulation workers")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = Path(args.out)
            if cfg.synthetic is not None:
                # generated inputs live under the (possibly overridden) out dir
                cfg.paths = {key: cfg.out_dir / "data" / f"{key}.csv" for key in cfg.paths}
        problems = cfg.validate()
        if problems:
            for p in problems:
                print(f"config error: {p}", file=sys.stderr)
            return 2
        COMMANDS[args.command](cfg, args.jobs)
        return 0
    except (ConfigError, PipelineError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
