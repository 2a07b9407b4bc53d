"""Delimited output and report figures.

Per-seed episode records and the cross-seed aggregate are written as CSV with
floats at 6 significant digits, so identical runs produce byte-identical
files. The plot-data report derives a per-episode series table (cap value
included as a column) and renders the matching figures next to it.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

MACRO_FIELDS = ("episode", "epoch", "vessel", "route_id", "window_target",
                "window_slack", "envelope")


def fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6g}"


def write_records_csv(path: str, records) -> None:
    from .harness import RECORD_FIELDS
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for rec in records:
            writer.writerow([fmt(v) for v in rec.row()])


def read_records_csv(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return [
            {k: float(v) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def write_macro_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MACRO_FIELDS)
        for row in rows:
            writer.writerow([fmt(v) if not isinstance(v, str) else v
                             for v in row])


def write_aggregate_csv(path: str, summary: list[dict]) -> None:
    cols = ("metric", "mean_over_episodes_mean", "mean_over_episodes_std",
            "final_episode_mean", "final_episode_std")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in summary:
            writer.writerow([row["metric"]] + [fmt(row[c]) for c in cols[1:]])


def _seed_files(in_dir: str) -> list[str]:
    names = sorted(
        f for f in os.listdir(in_dir)
        if f.startswith("seed_") and f.endswith(".csv")
    )
    if not names:
        raise FileNotFoundError(f"no seed_*.csv files under {in_dir}")
    return [os.path.join(in_dir, f) for f in names]


PLOT_SERIES = ("total_return", "emissions_total", "gini", "minmax",
               "throughput", "waiting_hours", "lambda_final", "beta_final")


def build_plot_table(in_dir: str) -> list[dict]:
    """Per-episode mean across seeds of every logged metric, cap included."""
    per_seed = [read_records_csv(p) for p in _seed_files(in_dir)]
    lengths = {len(rows) for rows in per_seed}
    if len(lengths) != 1:
        raise ValueError(f"ragged seed files: episode counts {sorted(lengths)}")
    n_ep = lengths.pop()
    table = []
    for i in range(n_ep):
        row = {"episode": int(per_seed[0][i]["episode"])}
        for metric in PLOT_SERIES:
            row[metric] = float(np.mean([rows[i][metric] for rows in per_seed]))
        row["cap"] = float(np.mean([rows[i]["cap"] for rows in per_seed]))
        table.append(row)
    return table


def write_plot_data(in_dir: str, out_dir: str | None = None,
                    render: bool = True) -> list[str]:
    """Emit plot_data.csv and render the report figures alongside it."""
    out_dir = out_dir or in_dir
    os.makedirs(out_dir, exist_ok=True)
    table = build_plot_table(in_dir)
    cols = ["episode", *PLOT_SERIES, "cap"]
    csv_path = os.path.join(out_dir, "plot_data.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in table:
            writer.writerow([fmt(row[c]) for c in cols])
    written = [csv_path]
    if render:
        written += render_figures(table, out_dir)
    return written


def _smooth(y: np.ndarray, span: int = 25) -> np.ndarray:
    if y.size <= span:
        return y
    kernel = np.ones(span) / span
    return np.convolve(y, kernel, mode="valid")


def render_figures(table: list[dict], out_dir: str) -> list[str]:
    episodes = np.array([row["episode"] for row in table])
    paths = []

    def series(name: str) -> np.ndarray:
        return np.array([row[name] for row in table])

    def save(fig, name: str) -> None:
        path = os.path.join(out_dir, name)
        fig.tight_layout()
        fig.savefig(path, dpi=130)
        plt.close(fig)
        paths.append(path)

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    g = series("gini")
    ax.plot(episodes, g, alpha=0.3, lw=0.8, color="tab:blue")
    sm = _smooth(g)
    ax.plot(episodes[episodes.size - sm.size:], sm, color="tab:blue",
            label="gini (per episode)")
    ax.set_xlabel("episode")
    ax.set_ylabel("Gini (lower is fairer)")
    ax.legend(frameon=False)
    save(fig, "gini.png")

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    m = series("minmax")
    ax.plot(episodes, m, alpha=0.3, lw=0.8, color="tab:green")
    sm = _smooth(m)
    ax.plot(episodes[episodes.size - sm.size:], sm, color="tab:green",
            label="min-max ratio")
    ax.set_xlabel("episode")
    ax.set_ylabel("min-max (higher is fairer)")
    ax.legend(frameon=False)
    save(fig, "minmax.png")

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    e = series("emissions_total")
    cap = series("cap")
    ax.plot(episodes, e, alpha=0.3, lw=0.8, color="tab:red")
    sm = _smooth(e)
    ax.plot(episodes[episodes.size - sm.size:], sm, color="tab:red",
            label="episode emissions")
    ax.plot(episodes, cap, color="black", ls="--", lw=1.2, label="cap B")
    ax.set_xlabel("episode")
    ax.set_ylabel("kg CO2e per episode")
    ax.legend(frameon=False)
    save(fig, "emissions.png")

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    r = series("total_return")
    ax.plot(episodes, r, alpha=0.3, lw=0.8, color="tab:purple")
    sm = _smooth(r)
    ax.plot(episodes[episodes.size - sm.size:], sm, color="tab:purple",
            label="raw return")
    ax.set_xlabel("episode")
    ax.set_ylabel("fleet return")
    ax.legend(frameon=False)
    save(fig, "return.png")
    return paths
