"""Report emission: KPI csv files, MSE/gap tables, sweep matrices.

All numeric output uses fixed decimal formatting so a rerun with the same
config and seed is byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import SLOTS_PER_DAY
from .engine import DayKpi, aggregate_kpis


def write_kpi_csv(path, days: list[DayKpi], per_slot: bool = False) -> None:
    header = ["date", "missed_withdrawals", "missed_returns", "total_missed", "total_km", "relocated_bikes"]
    if per_slot:
        header += [f"missed_slot_{i:02d}" for i in range(SLOTS_PER_DAY)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for day in days:
            c = day.counters
            row = [
                day.ctx.date.isoformat(),
                c.missed_withdrawals,
                c.missed_returns,
                c.total_missed,
                f"{c.total_km:.3f}",
                c.relocated_bikes,
            ]
            if per_slot:
                slot_missed = day.per_slot["missed_withdrawals"] + day.per_slot["missed_returns"]
                row += [int(x) for x in slot_missed]
            writer.writerow(row)


def read_kpi_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- forecast evaluation tables ----------------------------------------------

def write_mse_csv(path, rows: list[dict]) -> None:
    """Rows of {model, year, mse, gap_pct, n, n_excluded}; None marks no history."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "year", "mse", "gap_pct", "n", "n_excluded"])
        for r in rows:
            gap = "" if r["gap_pct"] is None else f"{r['gap_pct']:.2f}"
            value = "" if r["mse"] is None else f"{r['mse']:.6f}"
            writer.writerow([r["model"], r["year"], value, gap, r["n"], r["n_excluded"]])


def format_mse_table(rows: list[dict]) -> str:
    """Aligned text table, one column per model, MSE and %-gap row per year."""
    models = []
    for r in rows:
        if r["model"] not in models:
            models.append(r["model"])
    years = sorted({r["year"] for r in rows})
    cell = {(r["model"], r["year"]): r for r in rows}
    width = max(12, max(len(m) for m in models) + 2)
    lines = ["".ljust(8) + "".join(m.rjust(width) for m in models)]
    for year in years:
        mse_line = f"{year}".ljust(8)
        gap_line = "% gap".ljust(8)
        for m in models:
            r = cell.get((m, year))
            mse_line += (f"{r['mse']:.3f}" if r and r["mse"] is not None else "-").rjust(width)
            if r is None or r["gap_pct"] is None:
                gap_line += "-".rjust(width)
            else:
                gap_line += f"{r['gap_pct']:.2f}".rjust(width)
        lines.append(mse_line)
        lines.append(gap_line)
    return "\n".join(lines) + "\n"


def write_error_distribution_csv(path, errors: np.ndarray, keys: np.ndarray, key_name: str) -> None:
    """Box statistics of forecast errors grouped by slot or weekday."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([key_name, "n", "min", "q1", "median", "q3", "max", "mean"])
        for key in np.unique(keys):
            vals = errors[keys == key]
            box = np.percentile(vals, [0, 25, 50, 75, 100])
            writer.writerow(
                [int(key), len(vals)] + [f"{v:.4f}" for v in box] + [f"{vals.mean():.4f}"]
            )


# -- simulation campaign report -----------------------------------------------

def write_campaign_report(path, results: dict[str, list[DayKpi]], baseline: str | None) -> None:
    """Aligned text summary over relocation days, with monthly/weekday breakdowns."""
    lines = []
    stats = {
        name: aggregate_kpis(days, "none", relocation_days_only=True)["all"]
        for name, days in results.items()
    }
    base_mean = stats[baseline].mean_total_missed if baseline and baseline in stats else None
    width = max(22, max(len(n) for n in stats) + 2)
    lines.append("Averages over relocation days (Sundays excluded)")
    header = "model".ljust(width) + "".join(
        h.rjust(14)
        for h in ("missed_w", "missed_r", "total_missed", "gap_vs_base%", "total_km", "relocated")
    )
    lines.append(header)
    for name, s in stats.items():
        if base_mean and base_mean > 0:
            gap = 100.0 * (s.mean_total_missed - base_mean) / base_mean
            gap_text = f"{gap:.2f}"
        else:
            gap_text = "-"
        lines.append(
            name.ljust(width)
            + f"{s.mean_missed_withdrawals:.2f}".rjust(14)
            + f"{s.mean_missed_returns:.2f}".rjust(14)
            + f"{s.mean_total_missed:.2f}".rjust(14)
            + gap_text.rjust(14)
            + f"{s.mean_total_km:.2f}".rjust(14)
            + f"{s.mean_relocated_bikes:.2f}".rjust(14)
        )
    for grouping, label in (("month", "month"), ("day_of_week", "weekday")):
        lines.append("")
        lines.append(f"Mean total missed requests by {label}")
        names = list(results)
        lines.append(label.ljust(10) + "".join(n.rjust(width) for n in names))
        keys = sorted(
            set().union(*(aggregate_kpis(results[n], grouping, relocation_days_only=True) for n in names))
        )
        per_model = {
            n: aggregate_kpis(results[n], grouping, relocation_days_only=True) for n in names
        }
        for key in keys:
            row = str(key).ljust(10)
            for n in names:
                s = per_model[n].get(key)
                row += (f"{s.mean_total_missed:.2f}" if s else "-").rjust(width)
            lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


# -- fleet sweep ---------------------------------------------------------------

def best_cells(matrix: dict[tuple[int, int], float], max_fleet: int) -> set[tuple[int, int]]:
    """Lowest-mean cell for each fleet size m + a = F."""
    best = set()
    for total in range(0, max_fleet + 1):
        cells = [(m, total - m) for m in range(total + 1) if (m, total - m) in matrix]
        if cells:
            best.add(min(cells, key=lambda c: (matrix[c], c)))
    return best


def write_sweep_csv(path, matrix: dict[tuple[int, int], float], max_fleet: int) -> None:
    best = best_cells(matrix, max_fleet)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["morning", "afternoon", "mean_total_missed", "best_for_fleet_size"])
        for (m, a) in sorted(matrix):
            writer.writerow([m, a, f"{matrix[(m, a)]:.2f}", int((m, a) in best)])


def format_sweep_matrix(matrix: dict[tuple[int, int], float], max_fleet: int) -> str:
    """Lower-triangle layout, '*' marking the best cell per fleet size."""
    best = best_cells(matrix, max_fleet)
    width = 11
    lines = ["morning\\afternoon".ljust(18) + "".join(str(a).rjust(width) for a in range(max_fleet + 1))]
    for m in range(max_fleet + 1):
        row = str(m).ljust(18)
        for a in range(max_fleet + 1):
            if (m, a) in matrix:
                mark = "*" if (m, a) in best else ""
                row += f"{matrix[(m, a)]:.2f}{mark}".rjust(width)
            else:
                row += "".rjust(width)
        lines.append(row)
    return "\n".join(lines) + "\n"
