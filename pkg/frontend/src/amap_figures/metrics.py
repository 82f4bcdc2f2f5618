"""Metric-over-time figures: mean curves with 95% confidence bands.

Consumes the experiment CSV schema:
trial_id,env_seed,time,tr_P,map_rmse,tr_Sigma,pose_err,planner,utility,mapping_mode
One curve per group (default grouping: planner, utility, mapping_mode),
one panel per requested metric; trials are aligned to 1 s time bins by
nearest measurement event.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

EXPECTED_HEADER = [
    "trial_id", "env_seed", "time", "tr_P", "map_rmse", "tr_Sigma",
    "pose_err", "planner", "utility", "mapping_mode",
]
METRICS = ("tr_P", "map_rmse", "tr_Sigma", "pose_err")
_LABELS = {
    "tr_P": "Tr(P) (map covariance trace)",
    "map_rmse": "map RMSE",
    "tr_Sigma": "Tr(Sigma) (pose covariance trace)",
    "pose_err": "pose error [m]",
}


class MissingColumnError(ValueError):
    pass


@dataclass(frozen=True)
class FigureSpec:
    csv_paths: tuple
    out_path: str
    metrics: tuple = METRICS
    group_keys: tuple = ("planner", "utility", "mapping_mode")
    log_scale: tuple = ("tr_P",)
    bin_width: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "csv_paths", tuple(self.csv_paths))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        object.__setattr__(self, "group_keys", tuple(self.group_keys))
        object.__setattr__(self, "log_scale", tuple(self.log_scale))
        missing = [m for m in self.metrics if m not in EXPECTED_HEADER]
        missing += [k for k in self.group_keys if k not in EXPECTED_HEADER]
        if missing:
            raise MissingColumnError(
                f"not in the CSV schema: {sorted(set(missing))}"
            )


def read_events(csv_paths, group_keys):
    """(group label) -> {trial key -> sorted [(time, {metric: value})]}."""
    events: dict = {}
    for path in csv_paths:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != EXPECTED_HEADER:
                raise MissingColumnError(
                    f"{path}: header {header} != expected {EXPECTED_HEADER}"
                )
            for row in reader:
                rec = dict(zip(header, row))
                group = ", ".join(rec[k] for k in group_keys)
                trial = (str(path), rec["trial_id"])
                vals = {m: float(rec[m]) for m in METRICS}
                events.setdefault(group, {}).setdefault(trial, []).append(
                    (float(rec["time"]), vals)
                )
    for trials in events.values():
        for series in trials.values():
            series.sort(key=lambda tv: tv[0])
    return events


def binned_stats(trials, metric, bin_width):
    """(bin times, means, 95% CI half-widths) by nearest-event alignment."""
    t_max = max(series[-1][0] for series in trials.values())
    bins = np.arange(0.0, np.floor(t_max / bin_width + 1e-9) * bin_width + 1e-9,
                     bin_width)
    means, cis = [], []
    for t_bin in bins:
        vals = []
        for series in trials.values():
            times = np.array([t for t, _ in series])
            nearest = int(np.argmin(np.abs(times - t_bin)))
            vals.append(series[nearest][1][metric])
        arr = np.array(vals)
        means.append(arr.mean())
        if arr.size > 1:
            cis.append(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))
        else:
            cis.append(0.0)
    return bins, np.array(means), np.array(cis)


def plot_metrics(spec: FigureSpec) -> Path:
    """Render one panel per metric, one mean+CI curve per group."""
    events = read_events(spec.csv_paths, spec.group_keys)
    n = len(spec.metrics)
    ncols = 2 if n > 1 else 1
    nrows = int(np.ceil(n / ncols))
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(6.0 * ncols, 3.6 * nrows), squeeze=False
    )
    for i, metric in enumerate(spec.metrics):
        ax = axes[i // ncols][i % ncols]
        for group in sorted(events):
            bins, mean, ci = binned_stats(
                events[group], metric, spec.bin_width
            )
            ax.plot(bins, mean, label=group)
            ax.fill_between(bins, mean - ci, mean + ci, alpha=0.25)
        if metric in spec.log_scale:
            ax.set_yscale("log")
        ax.set_xlabel("time [s]")
        ax.set_ylabel(_LABELS.get(metric, metric))
        ax.legend(fontsize=7)
    for j in range(n, nrows * ncols):
        axes[j // ncols][j % ncols].axis("off")
    fig.tight_layout()
    out = Path(spec.out_path)
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out
