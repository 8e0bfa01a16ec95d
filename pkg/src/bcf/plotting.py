"""Figure rendering for experiment result rows.

Each experiment family gets one PNG summarizing its result file, saved next
to the delimited output. Rendering consumes only ResultRow streams, so a
previously written CSV can be re-plotted without re-running anything.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiments import ResultRow

_METHOD_ORDER = ("bcf", "ls", "imp_oracle", "structural", "constant")


def _series(rows, metric: str) -> dict[str, dict[float, list[float]]]:
    """method -> param_value -> values over repetitions."""
    out: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        if row.metric == metric:
            out[row.method][row.param_value].append(row.value)
    return out


def _method_sort_key(name: str):
    try:
        return (0, _METHOD_ORDER.index(name))
    except ValueError:
        return (1, name)


def plot_rows(rows: list[ResultRow], experiment: str, path) -> Path:
    """Render the figure for `experiment` from its rows; returns the path."""
    if experiment == "exp1":
        fig = _plot_shift_curves(rows)
    elif experiment == "exp2":
        fig = _plot_recovery_curves(rows)
    elif experiment == "tabular":
        fig = _plot_split_bars(rows)
    else:
        raise ValueError(f"unknown experiment {experiment!r}")
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def figure_path(results_path) -> Path:
    return Path(results_path).with_suffix(".png")


def _plot_shift_curves(rows):
    fig, ax = plt.subplots(figsize=(6.0, 4.0), constrained_layout=True)
    series = _series(rows, "mse")
    for method in sorted(series, key=_method_sort_key):
        points = series[method]
        ks = sorted(points)
        medians = [float(sorted(points[k])[len(points[k]) // 2]) for k in ks]
        ax.plot(ks, medians, marker="o", label=method)
    ax.set_xlabel("shift strength k")
    ax.set_ylabel("test MSE (median over repetitions)")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return fig


def _plot_recovery_curves(rows):
    fig, ax = plt.subplots(figsize=(6.0, 4.0), constrained_layout=True)
    series = _series(rows, "subspace_distance")
    for method in sorted(series):
        points = series[method]
        ns = sorted(points)
        means = [sum(points[n]) / len(points[n]) for n in ns]
        ax.plot(ns, means, marker="o", label=method)
    ax.set_xlabel("sample size n")
    ax.set_ylabel("mean subspace distance")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return fig


def _plot_split_bars(rows):
    fig, ax = plt.subplots(figsize=(6.0, 4.0), constrained_layout=True)
    metrics = ("mse_holdout", "mse_test")
    methods = sorted({row.method for row in rows}, key=_method_sort_key)
    width = 0.8 / max(1, len(metrics))
    for j, metric in enumerate(metrics):
        series = _series(rows, metric)
        means, mins, maxs = [], [], []
        for method in methods:
            values = [v for vals in series.get(method, {}).values() for v in vals]
            if not values:
                values = [float("nan")]
            means.append(sum(values) / len(values))
            mins.append(min(values))
            maxs.append(max(values))
        positions = [i + (j - (len(metrics) - 1) / 2) * width for i in range(len(methods))]
        err_low = [m - lo for m, lo in zip(means, mins)]
        err_high = [hi - m for m, hi in zip(means, maxs)]
        ax.bar(positions, means, width=width, label=metric,
               yerr=[err_low, err_high], capsize=3)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods)
    ax.set_ylabel("MSE (mean, min-max band)")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return fig
