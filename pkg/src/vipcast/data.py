"""Datasets: value matrices, adjacency graphs, normalization and windows.

File formats (see docs/DATA_FORMAT.md):

Value file::

    # comment lines start with '#'
    n,T_total,interval_seconds,start_offset
    v_0_0,v_0_1,...,v_0_{T-1}
    ...                              (n rows)

Adjacency file::

    n=<count>                        (optional; must match the value file)
    i,j,weight                       (weight optional, defaults to 1.0)

Edges are undirected; self-loops are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, DegenerateDataError, ParseError

SECONDS_PER_DAY = 86400
NormalizedAdjacency = np.ndarray


@dataclass(frozen=True)
class RawSeries:
    """n x T matrix of readings plus its position in the day/week cycle.

    Attributes:
        values: (n, T) float64 readings.
        interval_seconds: Seconds between consecutive readings.
        start_offset: Interval index of the first reading within the cycle.
    """

    values: np.ndarray
    interval_seconds: int = 300
    start_offset: int = 0

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def T(self) -> int:
        return int(self.values.shape[1])

    def slice(self, start: int, stop: int) -> "RawSeries":
        """Time slice [start, stop) with the cycle offset carried along."""
        return RawSeries(self.values[:, start:stop], self.interval_seconds, self.start_offset + start)


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Static n x n graph; a nonzero off-diagonal entry marks a link."""

    entries: np.ndarray

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    def degrees(self) -> np.ndarray:
        """Unweighted degree (number of links) of every node."""
        linked = self.entries != 0
        np.fill_diagonal(linked, False)
        return linked.sum(axis=1)


@dataclass(frozen=True)
class WindowSample:
    """One training window.

    Attributes:
        x_in: (n, l) inputs.
        x_out: (n, l') targets.
        tod: (l,) time-of-day index of every input step.
        dow: (l,) day-of-week index of every input step.
    """

    x_in: np.ndarray
    x_out: np.ndarray
    tod: np.ndarray
    dow: np.ndarray


@dataclass(frozen=True)
class WindowBatch:
    """B windows stacked along a leading axis."""

    x_in: np.ndarray
    x_out: np.ndarray
    tod: np.ndarray
    dow: np.ndarray

    def __len__(self) -> int:
        return int(self.x_in.shape[0])

    @classmethod
    def from_samples(cls, samples: Sequence[WindowSample]) -> "WindowBatch":
        if not samples:
            raise ContractError("cannot batch an empty window sequence")
        return cls(
            np.stack([s.x_in for s in samples]),
            np.stack([s.x_out for s in samples]),
            np.stack([s.tod for s in samples]),
            np.stack([s.dow for s in samples]),
        )

    def take(self, indices: Sequence[int]) -> "WindowBatch":
        idx = np.asarray(indices, dtype=np.intp)
        return WindowBatch(self.x_in[idx], self.x_out[idx], self.tod[idx], self.dow[idx])

    def sample(self, i: int) -> WindowSample:
        return WindowSample(self.x_in[i], self.x_out[i], self.tod[i], self.dow[i])

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator["WindowBatch"]:
        """Yield consecutive batches, optionally in a given window order."""
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            yield self.take(order[start : start + batch_size])


@dataclass(frozen=True)
class NormStats:
    """Global z-score statistics (one mean/std pair for all variables)."""

    mean: float
    std: float


# ---------------------------------------------------------------------------
# Loading and writing
# ---------------------------------------------------------------------------


def _data_lines(path: Path) -> Iterator[Tuple[int, str]]:
    with path.open() as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def _parse_floats(line: str, path: str, lineno: int) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in line.split(",")], dtype=np.float64)
    except ValueError:
        raise ParseError("non-numeric value", path, lineno) from None


def load_values(path: Union[str, Path]) -> RawSeries:
    """Parse a value file.

    Raises:
        ParseError: On a malformed header, wrong row count or width, or non-finite values.
    """
    p = Path(path)
    lines = _data_lines(p)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError("empty value file", str(p)) from None
    fields = header.split(",")
    try:
        head = [int(tok) for tok in fields]
    except ValueError:
        raise ParseError("header must be n,T_total,interval_seconds,start_offset", str(p), lineno) from None
    if len(head) not in (3, 4):
        raise ParseError("header must be n,T_total,interval_seconds,start_offset", str(p), lineno)
    n, t_total, interval = head[:3]
    start_offset = head[3] if len(head) == 4 else 0
    if n < 2 or t_total < 1 or interval < 1 or start_offset < 0:
        raise ParseError(f"invalid header values {head}", str(p), lineno)

    values = np.empty((n, t_total), dtype=np.float64)
    row = 0
    for lineno, line in lines:
        if row >= n:
            raise ParseError(f"more than n={n} rows", str(p), lineno)
        parsed = _parse_floats(line, str(p), lineno)
        if parsed.size != t_total:
            raise ParseError(f"expected {t_total} values, got {parsed.size}", str(p), lineno)
        if not np.all(np.isfinite(parsed)):
            raise ParseError("non-finite value", str(p), lineno)
        values[row] = parsed
        row += 1
    if row != n:
        raise ParseError(f"expected {n} rows, got {row}", str(p))
    return RawSeries(values, interval, start_offset)


def load_adjacency(path: Union[str, Path], n: int) -> AdjacencyMatrix:
    """Parse an edge list into a dense symmetric n x n matrix.

    A first line that is not numeric (e.g. "from,to,cost") is taken as a
    column header and skipped.

    Raises:
        ParseError: On malformed rows, out-of-range indices, negative weights
            or a declared n that differs from `n`.
    """
    p = Path(path)
    entries = np.zeros((n, n), dtype=np.float64)
    first = True
    for lineno, line in _data_lines(p):
        if line.startswith("n="):
            try:
                declared = int(line[2:])
            except ValueError:
                raise ParseError("bad n= declaration", str(p), lineno) from None
            if declared != n:
                raise ParseError(f"adjacency declares n={declared}, value file has n={n}", str(p), lineno)
            continue
        toks = [t.strip() for t in line.split(",")]
        if first and toks and not _is_number(toks[0]):
            first = False
            continue
        first = False
        if len(toks) not in (2, 3):
            raise ParseError("expected i,j[,weight]", str(p), lineno)
        try:
            i, j = int(toks[0]), int(toks[1])
            w = float(toks[2]) if len(toks) == 3 else 1.0
        except ValueError:
            raise ParseError("expected integer indices and a numeric weight", str(p), lineno) from None
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"edge ({i},{j}) out of range for n={n}", str(p), lineno)
        if not math.isfinite(w) or w < 0:
            raise ParseError(f"weight must be finite and nonnegative, got {w}", str(p), lineno)
        if i == j:
            continue
        entries[i, j] = w
        entries[j, i] = w
    return AdjacencyMatrix(entries)


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def load_dataset(values_path: Union[str, Path], adjacency_path: Union[str, Path]) -> Tuple[RawSeries, AdjacencyMatrix]:
    """Load a value file and its adjacency edge list."""
    series = load_values(values_path)
    return series, load_adjacency(adjacency_path, series.n)


def load_coords(path: Union[str, Path], n: int) -> np.ndarray:
    """Parse an "index,x,y" file into an (n, 2) array.

    Raises:
        ParseError: On malformed rows, bad indices or missing nodes.
    """
    p = Path(path)
    coords = np.full((n, 2), np.nan)
    first = True
    for lineno, line in _data_lines(p):
        toks = [t.strip() for t in line.split(",")]
        if first and not _is_number(toks[0]):
            first = False
            continue
        first = False
        if len(toks) != 3:
            raise ParseError("expected index,x,y", str(p), lineno)
        try:
            i, x, y = int(toks[0]), float(toks[1]), float(toks[2])
        except ValueError:
            raise ParseError("expected index,x,y", str(p), lineno) from None
        if not 0 <= i < n:
            raise ParseError(f"index {i} out of range for n={n}", str(p), lineno)
        coords[i] = (x, y)
    missing = np.flatnonzero(np.isnan(coords).any(axis=1))
    if missing.size:
        raise ParseError(f"no coordinates for {missing.size} node(s), first {int(missing[0])}", str(p))
    return coords


def _fmt(v: float) -> str:
    return repr(float(v))


def write_values(path: Union[str, Path], series: RawSeries) -> None:
    lines = [f"{series.n},{series.T},{series.interval_seconds},{series.start_offset}"]
    lines.extend(",".join(_fmt(v) for v in row) for row in series.values)
    Path(path).write_text("\n".join(lines) + "\n")


def write_adjacency(path: Union[str, Path], adjacency: AdjacencyMatrix) -> None:
    lines = [f"n={adjacency.n}"]
    ii, jj = np.nonzero(np.triu(adjacency.entries, k=1))
    lines.extend(f"{i},{j},{_fmt(adjacency.entries[i, j])}" for i, j in zip(ii, jj))
    Path(path).write_text("\n".join(lines) + "\n")


def write_coords(path: Union[str, Path], coords: np.ndarray) -> None:
    lines = ["index,x,y"]
    lines.extend(f"{i},{_fmt(x)},{_fmt(y)}" for i, (x, y) in enumerate(coords))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Normalization, splitting, windows
# ---------------------------------------------------------------------------


def zscore_fit(train: Union[RawSeries, np.ndarray]) -> NormStats:
    """Global mean and population std over every entry of the training split.

    Raises:
        DegenerateDataError: If the std is zero.
    """
    values = train.values if isinstance(train, RawSeries) else np.asarray(train, dtype=np.float64)
    mean = float(values.mean())
    std = float(values.std())
    if not std > 0.0:
        raise DegenerateDataError("training data has zero variance; cannot z-score normalize")
    return NormStats(mean, std)


def zscore_apply(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - stats.mean) / stats.std


def zscore_invert(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * stats.std + stats.mean


def normalize_series(series: RawSeries, stats: NormStats) -> RawSeries:
    return replace(series, values=zscore_apply(series.values, stats))


def split(series: RawSeries, ratios: Sequence[float], min_length: int = 1) -> Tuple[RawSeries, RawSeries, RawSeries]:
    """Chronological train/val/test split.

    Train and val lengths are floor(T * ratio); test takes the remainder.

    Raises:
        ConfigError: If ratios do not sum to 1 or a split is shorter than min_length.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError("split needs three positive ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    t = series.T
    n_train = math.floor(t * ratios[0] + 1e-9)
    n_val = math.floor(t * ratios[1] + 1e-9)
    bounds = (0, n_train, n_train + n_val, t)
    parts = tuple(series.slice(bounds[i], bounds[i + 1]) for i in range(3))
    for name, part in zip(("train", "val", "test"), parts):
        if part.T < min_length:
            raise ConfigError(f"{name} split has {part.T} steps, needs at least {min_length}")
    return parts  # type: ignore[return-value]


def temporal_indices(
    start: int, count: int, interval_seconds: int, steps_per_day: int = 288, days_per_week: int = 7
) -> Tuple[np.ndarray, np.ndarray]:
    """Time-of-day and day-of-week index of `count` steps from interval `start`."""
    seconds = (start + np.arange(count, dtype=np.int64)) * int(interval_seconds)
    tod = (seconds % SECONDS_PER_DAY) * steps_per_day // SECONDS_PER_DAY
    dow = (seconds // SECONDS_PER_DAY) % days_per_week
    return tod.astype(np.intp), dow.astype(np.intp)


def window_count(length: int, l: int, l_out: int, stride: int) -> int:
    if length < l + l_out:
        return 0
    return (length - l - l_out) // stride + 1


def make_windows(
    series: RawSeries,
    l: int,
    l_out: int,
    stride: int = 1,
    steps_per_day: int = 288,
    days_per_week: int = 7,
) -> List[WindowSample]:
    """Sliding windows over a split; empty when the split is too short."""
    return list(_iter_windows(series, l, l_out, stride, steps_per_day, days_per_week))


def make_window_batch(
    series: RawSeries,
    l: int,
    l_out: int,
    stride: int = 1,
    steps_per_day: int = 288,
    days_per_week: int = 7,
) -> Optional[WindowBatch]:
    """All windows of a split stacked into one WindowBatch (None when empty)."""
    if l < 1 or l_out < 1 or stride < 1:
        raise ConfigError("l, l_out and stride must be >= 1")
    count = window_count(series.T, l, l_out, stride)
    if count == 0:
        return None
    view = sliding_window_view(series.values, l + l_out, axis=1)[:, ::stride][:, :count]
    stacked = np.ascontiguousarray(np.moveaxis(view, 1, 0))
    tod, dow = temporal_indices(series.start_offset, series.T, series.interval_seconds, steps_per_day, days_per_week)
    starts = np.arange(count) * stride
    steps = starts[:, None] + np.arange(l)[None, :]
    return WindowBatch(stacked[:, :, :l].copy(), stacked[:, :, l:].copy(), tod[steps], dow[steps])


def _iter_windows(
    series: RawSeries, l: int, l_out: int, stride: int, steps_per_day: int, days_per_week: int
) -> Iterator[WindowSample]:
    batch = make_window_batch(series, l, l_out, stride, steps_per_day, days_per_week)
    if batch is None:
        return
    for i in range(len(batch)):
        yield batch.sample(i)


def normalize_adjacency(a: Union[AdjacencyMatrix, np.ndarray]) -> NormalizedAdjacency:
    """D~^-1/2 (A + I) D~^-1/2 with the input diagonal treated as absent.

    Raises:
        ContractError: If any entry is negative or the matrix is not square.
    """
    entries = np.array(a.entries if isinstance(a, AdjacencyMatrix) else a, dtype=np.float64)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise ContractError(f"adjacency must be square, got {entries.shape}")
    if np.any(entries < 0):
        raise ContractError("adjacency entries must be nonnegative")
    np.fill_diagonal(entries, 0.0)
    entries += np.eye(entries.shape[0])
    d = 1.0 / np.sqrt(entries.sum(axis=1))
    return d[:, None] * entries * d[None, :]
