"""Forecast accuracy and selection-diversity metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ContractError, ShapeError, UndefinedMetricError

MAPE_EPSILON = 1.0


def _pair(pred: np.ndarray, truth: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise UndefinedMetricError("no entries")
    return pred.reshape(-1), truth.reshape(-1)


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mape(pred: np.ndarray, truth: np.ndarray, epsilon: float = MAPE_EPSILON) -> Tuple[float, int]:
    """Mean absolute percentage error (in %) over entries with |truth| >= epsilon.

    Returns:
        (mape_pct, number of excluded entries)

    Raises:
        UndefinedMetricError: If every entry is excluded.
    """
    pred, truth = _pair(pred, truth)
    keep = np.abs(truth) >= epsilon
    excluded = int(truth.size - keep.sum())
    if not keep.any():
        raise UndefinedMetricError(f"all {truth.size} entries have |truth| < {epsilon}")
    return float(100.0 * np.mean(np.abs(pred[keep] - truth[keep]) / np.abs(truth[keep]))), excluded


@dataclass
class HorizonMetrics:
    """Per-step MAE / RMSE / MAPE for steps 1..l' plus an all-steps row.

    Attributes:
        mae, rmse, mape_pct, mape_excluded: Arrays of length l'.
        avg_*: The same metrics over every entry of every step.
    """

    mae: np.ndarray
    rmse: np.ndarray
    mape_pct: np.ndarray
    mape_excluded: np.ndarray
    avg_mae: float
    avg_rmse: float
    avg_mape_pct: float
    avg_mape_excluded: int

    def to_frame(self) -> pd.DataFrame:
        """One row per step ("1".."l'") plus an "avg" row."""
        steps = [str(j + 1) for j in range(len(self.mae))]
        frame = pd.DataFrame(
            {
                "horizon": steps + ["avg"],
                "mae": list(self.mae) + [self.avg_mae],
                "rmse": list(self.rmse) + [self.avg_rmse],
                "mape_pct": list(self.mape_pct) + [self.avg_mape_pct],
                "mape_excluded": list(self.mape_excluded) + [self.avg_mape_excluded],
            }
        )
        return frame

    def summary(self) -> dict:
        return {
            "mae": self.avg_mae,
            "rmse": self.avg_rmse,
            "mape_pct": self.avg_mape_pct,
            "mape_excluded": self.avg_mape_excluded,
        }


def _mape_or_nan(pred: np.ndarray, truth: np.ndarray, epsilon: float) -> Tuple[float, int]:
    try:
        return mape(pred, truth, epsilon)
    except UndefinedMetricError:
        return float("nan"), int(np.asarray(truth).size)


def horizon_metrics(pred: np.ndarray, truth: np.ndarray, epsilon: float = MAPE_EPSILON) -> HorizonMetrics:
    """Metrics per forecast step over arrays shaped (..., n, l') in original units.

    Steps where every truth value is excluded from MAPE report NaN.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    steps = pred.shape[-1]
    per_step = [
        (
            mae(pred[..., j], truth[..., j]),
            rmse(pred[..., j], truth[..., j]),
            *_mape_or_nan(pred[..., j], truth[..., j], epsilon),
        )
        for j in range(steps)
    ]
    cols = list(zip(*per_step))
    avg_mape, avg_excluded = _mape_or_nan(pred, truth, epsilon)
    return HorizonMetrics(
        mae=np.array(cols[0]),
        rmse=np.array(cols[1]),
        mape_pct=np.array(cols[2]),
        mape_excluded=np.array(cols[3], dtype=np.int64),
        avg_mae=mae(pred, truth),
        avg_rmse=rmse(pred, truth),
        avg_mape_pct=avg_mape,
        avg_mape_excluded=avg_excluded,
    )


def jaccard_distance(mask_log: Sequence[Sequence[np.ndarray]]) -> float:
    """1 - mean pairwise Jaccard similarity of per-batch masks.

    Pairs are formed within each iteration group; each group is averaged
    over its own B(B-1)/2 pairs, then groups are averaged.

    Raises:
        ContractError: If a group has fewer than two masks, a mask is
            all-zero, or there are no groups.
    """
    if not mask_log:
        raise ContractError("no mask groups")
    similarities = []
    for group in mask_log:
        masks = np.asarray([np.asarray(m) != 0 for m in group], dtype=np.float64)
        if masks.ndim != 2 or masks.shape[0] < 2:
            raise ContractError("every iteration group needs at least two masks")
        sizes = masks.sum(axis=1)
        if np.any(sizes == 0):
            raise ContractError("all-zero mask in Jaccard computation")
        inter = masks @ masks.T
        union = sizes[:, None] + sizes[None, :] - inter
        upper = np.triu_indices(masks.shape[0], k=1)
        similarities.append(float(np.mean(inter[upper] / union[upper])))
    return 1.0 - float(np.mean(similarities))
