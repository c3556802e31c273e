"""Merge finished runs into comparison tables."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from .events import warn

METRIC_COLUMNS = ("mae", "rmse", "mape_pct")
KEY_COLUMNS = ("run", "method", "seed", "n", "m", "sparsity")


def load_run(path: Union[str, Path]) -> Optional[Dict[str, Any]]:
    """Flatten a run's evaluation.json (preferred) or summary.json into one row.

    Returns None (with a warning event) when the run has neither.
    """
    run = Path(path)
    for name in ("evaluation.json", "summary.json"):
        file = run / name
        if file.exists():
            data = json.loads(file.read_text())
            break
    else:
        warn(f"skipping {run}: no evaluation.json or summary.json", run=str(run))
        return None
    metrics = data.get("metrics", {})
    n, m = data.get("n"), data.get("m")
    row: Dict[str, Any] = {
        "run": str(run),
        "method": data.get("method", "unknown"),
        "seed": data.get("seed"),
        "n": n,
        "m": m,
        "sparsity": (1.0 - m / n) if n and m else None,
        "split": data.get("split"),
    }
    for key in METRIC_COLUMNS:
        row[key] = metrics.get(key)
    if "jaccard_distance" in data:
        row["jaccard_distance"] = data["jaccard_distance"]
    return row


def build_report(run_dirs: Sequence[Union[str, Path]]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Comparison table (one row per run, then mean/std rows per method) and
    the sparsity-vs-error curve (mean over runs, sorted by sparsity)."""
    rows: List[Dict[str, Any]] = [r for r in (load_run(p) for p in run_dirs) if r is not None]
    if not rows:
        empty = pd.DataFrame(columns=list(KEY_COLUMNS) + list(METRIC_COLUMNS))
        return empty, pd.DataFrame(columns=["method", "sparsity", "runs", "mae", "rmse", "mape_pct"])
    table = pd.DataFrame(rows)
    for col in METRIC_COLUMNS:
        table[col] = pd.to_numeric(table[col], errors="coerce")

    aggregates = []
    for method, group in table.groupby("method", sort=True):
        metrics = group[list(METRIC_COLUMNS)]
        aggregates.append({"run": "<mean>", "method": method, "seed": "mean", **metrics.mean().to_dict()})
        aggregates.append({"run": "<std>", "method": method, "seed": "std", **metrics.std(ddof=0).to_dict()})
    table = pd.concat([table, pd.DataFrame(aggregates)], ignore_index=True)

    per_run = table[~table["run"].str.startswith("<")]
    curve = (
        per_run.dropna(subset=["sparsity"])
        .groupby(["method", "sparsity"], sort=True)
        .agg(runs=("run", "count"), mae=("mae", "mean"), rmse=("rmse", "mean"), mape_pct=("mape_pct", "mean"))
        .reset_index()
        .sort_values(["method", "sparsity"], kind="mergesort")
        .reset_index(drop=True)
    )
    return table, curve


def write_report(run_dirs: Sequence[Union[str, Path]], out_dir: Union[str, Path]) -> Dict[str, str]:
    """Write report.csv and sparsity_curve.csv; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, curve = build_report(run_dirs)
    paths = {"report": out / "report.csv", "curve": out / "sparsity_curve.csv"}
    table.to_csv(paths["report"], index=False, float_format="%.10g")
    curve.to_csv(paths["curve"], index=False, float_format="%.10g")
    return {k: str(v) for k, v in paths.items()}
