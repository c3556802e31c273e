"""Run directory layout and selection files.

    <run>/config.json              resolved RunConfig
    <run>/checkpoints/iter_XXX.npz model state after every pruning iteration
    <run>/final.npz                model state returned by train-vip / pretrain
    <run>/record.jsonl             TrainRecord, one JSON object per line
    <run>/selection.txt            selected variables
    <run>/val_metrics.csv          per-horizon validation metrics
    <run>/summary.json             final metrics
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .baselines import SelectionResult
from .config import RunConfig, config_to_dict
from .errors import ParseError
from .training import TrainRecord


class RunDir:
    """Paths of one run directory."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def create(self) -> "RunDir":
        (self.path / "checkpoints").mkdir(parents=True, exist_ok=True)
        return self

    @property
    def config(self) -> Path:
        return self.path / "config.json"

    @property
    def final(self) -> Path:
        return self.path / "final.npz"

    @property
    def record(self) -> Path:
        return self.path / "record.jsonl"

    @property
    def selection(self) -> Path:
        return self.path / "selection.txt"

    @property
    def val_metrics(self) -> Path:
        return self.path / "val_metrics.csv"

    @property
    def summary(self) -> Path:
        return self.path / "summary.json"

    def iteration_checkpoint(self, k: int) -> Path:
        return self.path / "checkpoints" / f"iter_{k:03d}.npz"

    def write_config(self, cfg: RunConfig) -> None:
        self.config.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")

    def write_summary(self, summary: Dict[str, Any]) -> None:
        self.summary.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    def read_summary(self) -> Dict[str, Any]:
        return json.loads(self.summary.read_text())


def write_metrics_csv(path: Union[str, Path], frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format="%.10g")


def write_record(path: Union[str, Path], record: TrainRecord) -> None:
    """TrainRecord as JSON lines: a header, then per iteration its summary and batch masks."""
    lines = [json.dumps({"type": "record", "n": record.n})]
    for summary, masks in zip(record.iterations, record.batch_masks):
        lines.append(json.dumps({"type": "iteration", **summary}))
        lines.append(json.dumps({"type": "masks", "k": summary["k"], "batches": masks}))
    Path(path).write_text("\n".join(lines) + "\n")


def read_record(path: Union[str, Path]) -> TrainRecord:
    """Parse a record.jsonl file.

    Raises:
        ParseError: On malformed lines or a missing header.
    """
    record: Optional[TrainRecord] = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, str(path), lineno) from None
        kind = obj.pop("type", None)
        if kind == "record":
            record = TrainRecord(n=int(obj["n"]))
        elif record is None:
            raise ParseError("record header must come first", str(path), lineno)
        elif kind == "iteration":
            record.iterations.append(obj)
        elif kind == "masks":
            record.batch_masks.append([list(map(int, b)) for b in obj["batches"]])
        else:
            raise ParseError(f"unknown line type {kind!r}", str(path), lineno)
    if record is None:
        raise ParseError("empty record file", str(path))
    return record


def write_selection(
    path: Union[str, Path],
    indices: Sequence[int],
    method: str,
    scores: Optional[np.ndarray] = None,
) -> None:
    """`# method=<name>` followed by one `index,score` line per selected variable."""
    lines = [f"# method={method}"]
    for i in sorted(int(i) for i in indices):
        score = "" if scores is None else repr(float(scores[i]))
        lines.append(f"{i},{score}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_selection_result(path: Union[str, Path], result: SelectionResult) -> None:
    write_selection(path, result.indices, result.method, result.scores)


def read_selection(path: Union[str, Path], n: Optional[int] = None) -> SelectionResult:
    """Parse a selection file.

    Raises:
        ParseError: On malformed lines, duplicates or indices outside [0, n).
    """
    method = "unknown"
    indices = []
    scores: Dict[int, float] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("method="):
                method = body[len("method="):].strip()
            continue
        index_text, _, score_text = line.partition(",")
        try:
            index = int(index_text)
            if score_text.strip():
                scores[index] = float(score_text)
        except ValueError:
            raise ParseError(f"expected index[,score], got {line!r}", str(path), lineno) from None
        if n is not None and not 0 <= index < n:
            raise ParseError(f"index {index} out of range for n={n}", str(path), lineno)
        if index in indices:
            raise ParseError(f"duplicate index {index}", str(path), lineno)
        indices.append(index)
    if not indices:
        raise ParseError("selection file lists no variables", str(path))
    score_array = None
    if scores and n is not None:
        score_array = np.full(n, np.nan)
        for i, s in scores.items():
            score_array[i] = s
    return SelectionResult(tuple(sorted(indices)), method, score_array)
