"""vipcast - spatio-temporal forecasting of every variable from a learned subset.

Main exports:
- load_config / RunConfig: Configuration (JSON or key=value files)
- load_dataset / split / make_window_batch: Data pipeline
- forward_stmf / init_params: Base attention forecaster
- train_vip / pretrain: Iterative variable-parameter pruning and pretraining
- forward_vip: Masked forecaster with extrapolation to unselected variables
- ReplayBuffer: Prioritized replay of past samples
- horizon_metrics / jaccard_distance: Evaluation
- run_selector: Baseline variable selectors
- tensor: Reverse-mode autodiff on numpy arrays
"""

from .config import ModelDims, RunConfig, SynthConfig, TrainingConfig, derive_seed, load_config
from .data import (
    AdjacencyMatrix,
    RawSeries,
    WindowBatch,
    WindowSample,
    load_dataset,
    make_window_batch,
    normalize_adjacency,
    split,
    zscore_fit,
)
from .errors import (
    BudgetError,
    ConfigError,
    ContractError,
    DegenerateDataError,
    NumericError,
    ParseError,
    ShapeError,
    UndefinedMetricError,
    UnsupportedMethodError,
    VipError,
)
from .model import ModelParams, forward_stmf, init_params, load_checkpoint, save_checkpoint
from .pruning import MaskState, PruneSchedule, compute_mask, retained_count
from .vip import BridgeParams, forward_vip
from .replay import ReplayBuffer, ReplaySample
from .training import TrainRecord, VipResult, pretrain, train_vip
from .metrics import HorizonMetrics, horizon_metrics, jaccard_distance
from .baselines import SelectionResult, run_selector
from .synth import synth_generate
from . import tensor

__all__ = [
    # Configuration
    "ModelDims",
    "RunConfig",
    "SynthConfig",
    "TrainingConfig",
    "derive_seed",
    "load_config",
    # Data
    "AdjacencyMatrix",
    "RawSeries",
    "WindowBatch",
    "WindowSample",
    "load_dataset",
    "make_window_batch",
    "normalize_adjacency",
    "split",
    "zscore_fit",
    "synth_generate",
    # Model and training
    "ModelParams",
    "forward_stmf",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "MaskState",
    "PruneSchedule",
    "compute_mask",
    "retained_count",
    "BridgeParams",
    "forward_vip",
    "ReplayBuffer",
    "ReplaySample",
    "TrainRecord",
    "VipResult",
    "pretrain",
    "train_vip",
    # Evaluation and baselines
    "HorizonMetrics",
    "horizon_metrics",
    "jaccard_distance",
    "SelectionResult",
    "run_selector",
    # Errors
    "VipError",
    "ConfigError",
    "ParseError",
    "UnsupportedMethodError",
    "DegenerateDataError",
    "BudgetError",
    "ContractError",
    "ShapeError",
    "UndefinedMetricError",
    "NumericError",
    # Autodiff
    "tensor",
]
