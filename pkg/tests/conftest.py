"""Shared fixtures: toy model dims, toy graphs, small synthetic datasets."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List

import numpy as np
import pytest

from vipcast.config import ModelDims, SynthConfig, TrainingConfig
from vipcast.data import AdjacencyMatrix, WindowBatch, normalize_adjacency
from vipcast.synth import synth_generate, write_synth

TOY_DIMS = dict(
    q=16,
    d=4,
    d_tod=4,
    d_dow=4,
    d_v=4,
    num_layers=2,
    num_heads=2,
    temporal_layers=1,
    ffn_dim=8,
    l=4,
    l_out=4,
)

SMALL_SYNTH = dict(n=8, T_total=240, k_d=2, noise=0.1, period=48)


def toy_dims(**changes) -> ModelDims:
    return ModelDims(**{**TOY_DIMS, **changes}).validate()


def path_graph(n: int) -> AdjacencyMatrix:
    entries = np.zeros((n, n))
    for i in range(n - 1):
        entries[i, i + 1] = entries[i + 1, i] = 1.0
    return AdjacencyMatrix(entries)


def random_batch(n: int, dims: ModelDims, batch: int, seed: int = 0) -> WindowBatch:
    rng = np.random.default_rng(seed)
    return WindowBatch(
        x_in=rng.standard_normal((batch, n, dims.l)),
        x_out=rng.standard_normal((batch, n, dims.l_out)),
        tod=rng.integers(0, dims.steps_per_day, size=(batch, dims.l)),
        dow=rng.integers(0, dims.days_per_week, size=(batch, dims.l)),
    )


def toy_cli_args() -> List[str]:
    """Overrides that shrink the model and training loop for CLI tests."""
    args: List[str] = []
    for key, value in TOY_DIMS.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    args += ["--batch-size", "32", "--epochs-per-iteration", "1", "--pretrain-epochs", "2", "--lr", "0.01", "--quiet"]
    return args


@pytest.fixture
def dims() -> ModelDims:
    return toy_dims()


@pytest.fixture
def graph5() -> AdjacencyMatrix:
    return path_graph(5)


@pytest.fixture
def a_norm5(graph5: AdjacencyMatrix) -> np.ndarray:
    return normalize_adjacency(graph5)


@pytest.fixture
def batch5(dims: ModelDims) -> WindowBatch:
    return random_batch(5, dims, batch=3)


@pytest.fixture
def fast_training() -> TrainingConfig:
    return TrainingConfig(
        r_b=0.5,
        r_p=0.2,
        epochs_per_iteration=1,
        batch_size=16,
        buffer_capacity=32,
        lr=1e-2,
        target_m=2,
    ).validate()


@pytest.fixture
def synth_files(tmp_path: Path) -> Dict[str, str]:
    """A written 8-variable synthetic dataset (values, adjacency, drivers, coords)."""
    cfg = SynthConfig(**SMALL_SYNTH).validate()
    return write_synth(tmp_path / "data", synth_generate(cfg, seed=7), cfg, seed=7)
