"""Synthetic datasets with a planted driver set.

k_d driver variables follow independent seasonal AR(1) processes. Every other
variable is a fixed random convex combination of `fan_in` drivers plus
Gaussian noise, and the graph links each non-driver to its drivers. The
drivers are therefore a known-good selection: every variable can be
reconstructed from them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .config import SynthConfig
from .data import AdjacencyMatrix, RawSeries, write_adjacency, write_coords, write_values

DRIVER_LEVEL = (40.0, 120.0)
DRIVER_AMPLITUDE = (10.0, 30.0)
DRIVER_AR_COEF = 0.8


@dataclass(frozen=True)
class SynthDataset:
    """Generated dataset.

    Attributes:
        series: (n, T_total) readings.
        adjacency: Graph linking each non-driver to its generating drivers.
        drivers: Sorted driver indices.
        mixing: (n, n) matrix; row i holds the convex weights of variable i
            over the drivers (identity rows for drivers).
        coords: (n, 2) planar positions (drivers uniform in the unit square,
            non-drivers near their drivers).
    """

    series: RawSeries
    adjacency: AdjacencyMatrix
    drivers: np.ndarray
    mixing: np.ndarray
    coords: np.ndarray


def synth_generate(cfg: SynthConfig, seed: int) -> SynthDataset:
    """Generate a dataset; identical (cfg, seed) gives bit-identical output.

    Raises:
        ConfigError: If k_d >= n or other settings are invalid.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    n, t_total, k_d = cfg.n, cfg.T_total, cfg.k_d
    fan_in = min(cfg.fan_in, k_d)

    drivers = np.sort(rng.choice(n, size=k_d, replace=False))
    others = np.setdiff1d(np.arange(n), drivers)

    level = rng.uniform(*DRIVER_LEVEL, size=k_d)
    amplitude = rng.uniform(*DRIVER_AMPLITUDE, size=k_d)
    phase = rng.uniform(0.0, cfg.period, size=k_d)
    t = np.arange(t_total) + cfg.start_offset
    seasonal = level[:, None] + amplitude[:, None] * np.sin(2.0 * np.pi * (t[None, :] + phase[:, None]) / cfg.period)

    shocks = rng.normal(0.0, cfg.ar_std, size=(k_d, t_total))
    ar = np.empty((k_d, t_total))
    ar[:, 0] = shocks[:, 0] / np.sqrt(1.0 - DRIVER_AR_COEF**2)
    for step in range(1, t_total):
        ar[:, step] = DRIVER_AR_COEF * ar[:, step - 1] + shocks[:, step]
    driver_values = seasonal + ar

    mixing = np.zeros((n, n))
    mixing[drivers, drivers] = 1.0
    entries = np.zeros((n, n))
    for i in others:
        sources = rng.choice(k_d, size=fan_in, replace=False)
        weights = rng.dirichlet(np.ones(fan_in))
        mixing[i, drivers[sources]] = weights
        entries[i, drivers[sources]] = 1.0
        entries[drivers[sources], i] = 1.0

    values = mixing[:, drivers] @ driver_values
    noise = rng.standard_normal((others.size, t_total))
    values[others] += cfg.noise * noise

    coords = np.zeros((n, 2))
    coords[drivers] = rng.uniform(0.0, 1.0, size=(k_d, 2))
    jitter = rng.normal(0.0, 0.05, size=(others.size, 2))
    coords[others] = mixing[others] @ coords + jitter

    series = RawSeries(values, cfg.interval_seconds, cfg.start_offset)
    return SynthDataset(series, AdjacencyMatrix(entries), drivers, mixing, coords)


def write_synth(directory: Union[str, Path], dataset: SynthDataset, cfg: SynthConfig, seed: int) -> Dict[str, str]:
    """Write values.csv, adjacency.csv, drivers.json and coords.csv.

    Returns:
        Mapping from file role to written path.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "values": out / "values.csv",
        "adjacency": out / "adjacency.csv",
        "drivers": out / "drivers.json",
        "coords": out / "coords.csv",
    }
    write_values(paths["values"], dataset.series)
    write_adjacency(paths["adjacency"], dataset.adjacency)
    manifest = {
        "drivers": dataset.drivers.tolist(),
        "n": cfg.n,
        "T_total": cfg.T_total,
        "k_d": cfg.k_d,
        "noise": cfg.noise,
        "period": cfg.period,
        "fan_in": cfg.fan_in,
        "ar_std": cfg.ar_std,
        "seed": seed,
    }
    paths["drivers"].write_text(json.dumps(manifest, indent=2) + "\n")
    write_coords(paths["coords"], dataset.coords)
    return {k: str(v) for k, v in paths.items()}


def load_drivers(path: Union[str, Path]) -> np.ndarray:
    """Driver indices from a drivers.json manifest."""
    return np.asarray(json.loads(Path(path).read_text())["drivers"], dtype=np.intp)
