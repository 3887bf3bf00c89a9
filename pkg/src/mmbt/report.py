"""Static tables and line plots from training histories and sweep tables."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import EmptyInput  # noqa: E402
from .training import SWEEP_AXES  # noqa: E402


def _write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _line_plot(path: Path, xs, series: dict[str, list], xlabel: str, ylabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=100)
    for label, ys in series.items():
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def history_report(records: Sequence[dict], out_dir, stem: str = "history") -> list[Path]:
    """One row per epoch with every numeric metric; a plot per metric."""
    if not records:
        raise EmptyInput("history is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table: dict[int, dict[str, float]] = defaultdict(dict)
    for r in records:
        if isinstance(r["value"], (int, float)):
            table[int(r["epoch"])][f"{r['split']}_{r['metric']}"] = float(r["value"])
    epochs = sorted(table)
    cols = sorted({k for row in table.values() for k in row})
    tsv = out_dir / f"{stem}.tsv"
    _write_tsv(tsv, ["epoch"] + cols, [[e] + [table[e].get(c, "") for c in cols] for e in epochs])
    paths = [tsv]
    for c in cols:
        png = out_dir / f"{stem}_{c}.png"
        _line_plot(png, epochs, {c: [table[e].get(c, float("nan")) for e in epochs]}, "epoch", c, f"{c} per epoch")
        paths.append(png)
    return paths


def sweep_curves(rows: Sequence[dict], metric: str = "dev_metric") -> dict[str, tuple[list, list]]:
    """For every axis with more than one value: best metric at each value."""
    curves = {}
    for axis in SWEEP_AXES:
        if not rows or axis not in rows[0]:
            continue
        values = sorted({r[axis] for r in rows})
        if len(values) < 2:
            continue
        best = [max(r[metric] for r in rows if r[axis] == v) for v in values]
        curves[axis] = (values, best)
    return curves


def sweep_report(rows: Sequence[dict], out_dir, stem: str = "sweep") -> list[Path]:
    if not rows:
        raise EmptyInput("sweep table is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for axis, (xs, ys) in sweep_curves(rows).items():
        tsv = out_dir / f"{stem}_curve_{axis}.tsv"
        _write_tsv(tsv, [axis, "best_dev_metric"], list(zip(xs, ys)))
        png = out_dir / f"{stem}_curve_{axis}.png"
        _line_plot(png, xs, {"dev": ys}, axis, "best dev metric", f"dev metric vs {axis}")
        paths += [tsv, png]
    return paths


def comparison_table(results: dict[str, dict[str, float]], path) -> Path:
    """Models as rows, evaluation sets as columns (cf. a results table)."""
    cols = sorted({c for row in results.values() for c in row})
    _write_tsv(Path(path), ["model"] + cols, [[m] + [results[m].get(c, "") for c in cols] for m in results])
    return Path(path)
