"""Figure rendering for reports, forecasts, sweeps and ablation summaries.

Every function writes PNG files next to the delimited outputs and returns
what it drew, so callers (and tests) can check the layout without parsing
images.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .losses import EvaluationReport


def plot_report_bars(report: EvaluationReport, out_path) -> int:
    """Grouped bar chart of per-period MSE/MAE; returns the group count."""
    periods = [(name, m) for name, m in report.periods.items()
               if m.mse is not None]
    names = [name for name, _ in periods]
    mses = [m.mse for _, m in periods]
    maes = [m.mae for _, m in periods]
    x = np.arange(len(names))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - width / 2, mses, width, label="MSE")
    ax.bar(x + width / 2, maes, width, label="MAE")
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("error (normalized scale)")
    ax.set_title(f"Per-period forecast error, horizon {report.horizon}")
    ax.legend()
    fig.tight_layout()
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return len(names)


def plot_node_forecasts(truth: np.ndarray, pred: np.ndarray,
                        timestamps, node_names, out_dir,
                        prefix: str = "forecast") -> list[Path]:
    """One truth-vs-prediction line chart per node; returns written paths.

    truth/pred: [steps, nodes] aligned to timestamps.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for j, name in enumerate(node_names):
        fig, ax = plt.subplots(figsize=(9, 3.2))
        ax.plot(timestamps, truth[:, j], label="truth", linewidth=1.0)
        ax.plot(timestamps, pred[:, j], label="prediction",
                linewidth=1.0, alpha=0.85)
        ax.set_title(name)
        ax.set_ylabel("flow")
        ax.legend(loc="upper right")
        fig.autofmt_xdate()
        fig.tight_layout()
        path = out_dir / f"{prefix}_{name}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_sweep(rows: list[dict], out_path) -> None:
    """MSE/MAE against history window size."""
    scored = [r for r in rows if r.get("mse") is not None]
    sizes = [r["history"] for r in scored]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, [r["mse"] for r in scored], marker="o", label="MSE")
    ax.plot(sizes, [r["mae"] for r in scored], marker="s", label="MAE")
    ax.set_xlabel("history window size")
    ax.set_ylabel("test error (normalized scale)")
    ax.set_title("History window sweep")
    ax.legend()
    fig.tight_layout()
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_variant_bars(results: dict[str, dict], out_path,
                      title: str = "Variant comparison") -> None:
    """Grouped MSE/MAE bars per named variant (ablation-style layout)."""
    names = list(results)
    mses = [results[n]["mse"] for n in names]
    maes = [results[n]["mae"] for n in names]
    x = np.arange(len(names))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(names)), 4))
    ax.bar(x - width / 2, mses, width, label="MSE")
    ax.bar(x + width / 2, maes, width, label="MAE")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("error (normalized scale)")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def report_to_csv(report: EvaluationReport, out_path) -> None:
    """Delimited form of a report: one row per (period, metric)."""
    rows = []
    for name, m in report.periods.items():
        rows.append({"period": name, "metric": "count", "value": m.count})
        for key in ("mse", "mae", "mse_denorm", "mae_denorm"):
            value = getattr(m, key)
            if value is not None:
                rows.append({"period": name, "metric": key, "value": value})
    pd.DataFrame(rows).to_csv(out_path, index=False)
