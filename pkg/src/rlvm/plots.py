"""SVG charts for method comparisons.

Every chart is written next to the CSV holding exactly the plotted values.
SVG output is made reproducible by fixing matplotlib's hash salt and
dropping the date metadata.
"""

import io
import logging
from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .utils import atomic_write_csv, atomic_write_text  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "rlvm"

BAR_METRICS = {
    "total_ec": "Total energy (MHz x slot)",
    "slav": "SLAV",
    "migrations": "VM migrations",
}


def _save_svg(fig, path: Path) -> Path:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return atomic_write_text(path, buffer.getvalue().decode("utf-8"))


def grouped_bars(summary: pd.DataFrame, metric: str, out_dir: Path) -> Path:
    """Bars of ``metric`` per request, one bar per method.

    ``summary`` holds one row per (request, method), typically the median
    over seeds.
    """
    table = summary.pivot(index="request", columns="method", values=metric)
    table = table.reindex(index=list(dict.fromkeys(summary["request"])), columns=list(dict.fromkeys(summary["method"])))
    atomic_write_csv(out_dir / f"bars_{metric}.csv", table.reset_index())

    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(table.columns), 1)
    positions = np.arange(len(table.index))
    for offset, method in enumerate(table.columns):
        ax.bar(positions + offset * width, table[method].to_numpy(), width, label=method)
    ax.set_xticks(positions + width * (len(table.columns) - 1) / 2)
    ax.set_xticklabels(table.index)
    ax.set_ylabel(BAR_METRICS.get(metric, metric))
    ax.grid(True, axis="y", color="grey", alpha=0.2)
    ax.legend(fontsize=8, framealpha=0.5)
    fig.tight_layout()
    path = _save_svg(fig, out_dir / f"bars_{metric}.svg")
    logger.info(f"Wrote {path}")
    return path


def per_slot_lines(series: Mapping[str, pd.DataFrame], column: str, request: str, out_dir: Path) -> Path:
    """One line per method of a per-slot column (e.g. ``ec_total``, ``migrations``)."""
    frame = pd.DataFrame({"slot": next(iter(series.values()))["slot"].to_numpy()} if series else {"slot": []})
    for method, per_slot in series.items():
        frame[method] = per_slot[column].to_numpy()
    stem = f"slots_{request}_{column}"
    atomic_write_csv(out_dir / f"{stem}.csv", frame)

    fig, ax = plt.subplots(figsize=(7, 3))
    for method in series:
        ax.plot(frame["slot"], frame[method], linewidth=1, label=method)
    ax.set_xlabel("slot")
    ax.set_ylabel(column)
    ax.set_title(request)
    ax.grid(True, color="grey", alpha=0.2)
    ax.legend(fontsize=8, framealpha=0.5)
    fig.tight_layout()
    return _save_svg(fig, out_dir / f"{stem}.svg")
