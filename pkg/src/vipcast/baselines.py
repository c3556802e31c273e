"""Non-learned variable selection heuristics.

All selectors return exactly m distinct indices and break ties toward the
lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .data import AdjacencyMatrix, RawSeries
from .errors import ConfigError, ContractError, UnsupportedMethodError

METHODS = ("max-value", "max-connectivity", "grid", "random")


@dataclass(frozen=True)
class SelectionResult:
    """Selected indices (sorted), the method name and optional per-variable scores."""

    indices: Tuple[int, ...]
    method: str
    scores: Optional[np.ndarray] = None


def _check_budget(n: int, m: int) -> None:
    if not 1 <= m <= n:
        raise ConfigError(f"m must be in [1, {n}], got {m}")


def top_m(scores: np.ndarray, m: int, candidates: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices of the m highest scores (ties: lowest index first)."""
    scores = np.asarray(scores, dtype=np.float64)
    idx = np.arange(scores.size) if candidates is None else np.asarray(candidates, dtype=np.intp)
    order = np.lexsort((idx, -scores[idx]))
    return idx[order[:m]]


def _result(indices: np.ndarray, method: str, scores: Optional[np.ndarray]) -> SelectionResult:
    return SelectionResult(tuple(sorted(int(i) for i in indices)), method, scores)


def select_max_value(series: RawSeries, m: int) -> SelectionResult:
    """Variables with the highest time-averaged raw value."""
    _check_budget(series.n, m)
    scores = series.values.mean(axis=1)
    return _result(top_m(scores, m), "max-value", scores)


def select_max_connectivity(adjacency: AdjacencyMatrix, m: int) -> SelectionResult:
    """Variables with the highest unweighted degree."""
    _check_budget(adjacency.n, m)
    scores = adjacency.degrees().astype(np.float64)
    return _result(top_m(scores, m), "max-connectivity", scores)


def select_grid(coords: Optional[np.ndarray], adjacency: AdjacencyMatrix, m: int) -> SelectionResult:
    """Highest-degree node per cell of a ceil(sqrt(m)) x ceil(sqrt(m)) grid.

    The grid spans the bounding box of the coordinates. Too many cell
    winners are cut back to the m highest-degree ones; too few are topped
    up with the highest-degree unselected nodes.

    Raises:
        UnsupportedMethodError: If coordinates are missing.
    """
    if coords is None:
        raise UnsupportedMethodError("grid selection needs node coordinates (coords_path)")
    coords = np.asarray(coords, dtype=np.float64)
    n = adjacency.n
    if coords.shape != (n, 2):
        raise UnsupportedMethodError(f"grid selection needs ({n}, 2) coordinates, got {coords.shape}")
    _check_budget(n, m)
    degree = adjacency.degrees().astype(np.float64)
    g = math.ceil(math.sqrt(m))

    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    cell_xy = np.clip(np.floor((coords - lo) / span * g).astype(np.intp), 0, g - 1)
    cell = cell_xy[:, 0] * g + cell_xy[:, 1]

    winners = np.array([top_m(degree, 1, np.flatnonzero(cell == c))[0] for c in np.unique(cell)], dtype=np.intp)
    if winners.size > m:
        chosen = top_m(degree, m, winners)
    else:
        rest = np.setdiff1d(np.arange(n), winners)
        chosen = np.concatenate([winners, top_m(degree, m - winners.size, rest)])
    return _result(chosen, "grid", degree)


def select_random(n: int, m: int, seed: int) -> SelectionResult:
    """Uniformly random m-subset."""
    _check_budget(n, m)
    rng = np.random.default_rng(seed)
    return _result(rng.choice(n, size=m, replace=False), "random", None)


def hybrid_pin(first_stage: SelectionResult, m: int) -> Tuple[int, ...]:
    """Pinned set for the hybrid mode: the ceil(m/2) variables of a first-stage selector.

    Raises:
        ContractError: If the first stage does not hold exactly ceil(m/2) indices.
    """
    need = math.ceil(m / 2)
    if len(first_stage.indices) != need:
        raise ContractError(f"first stage must select ceil(m/2) = {need} variables, got {len(first_stage.indices)}")
    return tuple(sorted(first_stage.indices))


def run_selector(
    method: str,
    m: int,
    series: RawSeries,
    adjacency: AdjacencyMatrix,
    coords: Optional[np.ndarray] = None,
    seed: int = 0,
) -> SelectionResult:
    """Dispatch by method name.

    Raises:
        UnsupportedMethodError: On an unknown method or missing inputs.
    """
    if method == "max-value":
        return select_max_value(series, m)
    if method == "max-connectivity":
        return select_max_connectivity(adjacency, m)
    if method == "grid":
        return select_grid(coords, adjacency, m)
    if method == "random":
        return select_random(series.n, m, seed)
    raise UnsupportedMethodError(f"unknown selection method {method!r}; choose from {METHODS}")


def selection_mask(indices: Sequence[int], n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=np.int8)
    mask[list(indices)] = 1
    return mask
