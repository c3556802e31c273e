"""Losses, pretraining and the iterative pruning loop.

One pruning iteration k trains for `epochs_per_iteration` epochs. Every batch:

1. recompute b, p from the live b_hat, p_hat over the survivors of
   iteration k-1, keeping the iteration-k retention counts;
2. forward the masked model and take the MAE main loss;
3. replay one stored sample (masks rebuilt from its snapshots);
4. add the random-mask regularizers on b_hat and p_hat;
5. take one Adam step on the model, bridge, b_hat and p_hat;
6. push one window of the batch, drawn at random, into the replay buffer;
   when the buffer is full this evicts the sample replayed in step 3.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .config import ModelDims, TrainingConfig, derive_seed, make_rng
from .data import WindowBatch, WindowSample
from .errors import ConfigError, NumericError, ShapeError
from .events import emit
from .model import ModelParams, Window, forward_stmf, init_params
from .optim import Adam
from .pruning import MaskState, PruneSchedule, compute_mask, init_mask_state, random_reg_mask, retained_count
from .replay import ReplayBuffer, ReplaySample
from .tensor import GradTape, Tensor, as_tensor, backward, mean, no_grad, power, tabs, take, tsum
from .vip import BridgeParams, forward_vip, init_bridge, vip_trace


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def main_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean absolute error over every entry."""
    target = np.asarray(target, dtype=np.float64)
    if tuple(pred.shape) != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return mean(tabs(pred - target))


def regularizer(values: Tensor, mask: np.ndarray, norm: str = "l1") -> Tensor:
    """Norm of values[mask]: l1, squared l2, their mean (elasticnet) or 0 (none)."""
    idx = np.flatnonzero(mask)
    if norm == "none" or idx.size == 0:
        return as_tensor(0.0)
    picked = take(values, idx, axis=0)
    if norm == "l1":
        return tsum(tabs(picked))
    if norm == "l2":
        return tsum(power(picked, 2.0))
    if norm == "elasticnet":
        return (tsum(tabs(picked)) + tsum(power(picked, 2.0))) * 0.5
    raise ConfigError(f"unknown reg_norm {norm!r}")


def sum_loss(
    main: Tensor,
    replay: Optional[Tensor],
    mask_state: MaskState,
    r1: np.ndarray,
    r2: np.ndarray,
    cfg: TrainingConfig,
) -> Tensor:
    """main + g1 * replay + g2 * ||b_hat[r1]|| + g3 * ||p_hat[r2]||.

    A missing replay term contributes 0; the ablation flags zero their weight.
    """
    total = main
    if replay is not None and not cfg.no_replay and cfg.gamma1:
        total = total + replay * cfg.gamma1
    if not cfg.no_b_reg and cfg.gamma2:
        total = total + regularizer(mask_state.b_hat, r1, cfg.reg_norm) * cfg.gamma2
    if not cfg.no_p_reg and cfg.gamma3:
        total = total + regularizer(mask_state.p_hat, r2, cfg.reg_norm) * cfg.gamma3
    return total


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------


def predict(forward: Callable[[Window], Tensor], windows: WindowBatch, batch_size: int = 256) -> np.ndarray:
    """Forecasts (B, n, l') for every window, without building a graph."""
    chunks = []
    with no_grad():
        for batch in windows.batches(batch_size):
            chunks.append(forward(batch).data)
    return np.concatenate(chunks, axis=0)


def validation_mae(forward: Callable[[Window], Tensor], windows: WindowBatch, batch_size: int = 256) -> float:
    """MAE over all variables in normalized units."""
    return float(np.mean(np.abs(predict(forward, windows, batch_size) - windows.x_out)))


def _check_finite(loss: Tensor, stage: str) -> None:
    if not np.isfinite(loss.item()):
        raise NumericError(f"loss diverged ({loss.item()})", stage=stage)


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


def pretrain(
    train: Optional[WindowBatch],
    val: Optional[WindowBatch],
    params: ModelParams,
    cfg: TrainingConfig,
    epochs: Optional[int] = None,
    patience: Optional[int] = None,
    quiet: bool = False,
) -> Tuple[ModelParams, List[Dict[str, float]]]:
    """Train the base forecaster and keep the best-validation snapshot.

    Stops once `patience` consecutive epochs fail to improve validation MAE
    (patience=0 stops at the first non-improving epoch).

    Returns:
        (best params, per-epoch history)

    Raises:
        ConfigError: If there are no training or validation windows.
    """
    if train is None or val is None or len(train) == 0 or len(val) == 0:
        raise ConfigError("pretraining needs non-empty train and validation windows")
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    patience = cfg.pretrain_patience if patience is None else patience
    shuffle = make_rng(cfg.seed, "shuffle")
    optimizer = Adam(params.parameters(), lr=cfg.lr)

    def forward(x: Window) -> Tensor:
        return forward_stmf(x, params)

    best_state = params.state_dict()
    best_val = float("inf")
    bad_epochs = 0
    history: List[Dict[str, float]] = []
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        losses = []
        for batch in train.batches(cfg.batch_size, shuffle.permutation(len(train))):
            optimizer.zero_grad()
            with GradTape() as tape:
                loss = main_loss(forward(batch), batch.x_out)
            _check_finite(loss, "loss")
            backward(loss, tape)
            optimizer.step()
            losses.append(loss.item())
        val_mae = validation_mae(forward, val, cfg.batch_size)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_mae": val_mae,
            "seconds": time.perf_counter() - started,
        }
        history.append(row)
        emit("epoch", quiet=quiet, phase="pretrain", **row)
        if val_mae < best_val:
            best_val = val_mae
            best_state = params.state_dict()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > patience:
                break
    params.load_state_dict(best_state)
    return params, history


# ---------------------------------------------------------------------------
# Pruning loop
# ---------------------------------------------------------------------------


@dataclass
class VipState:
    """Everything the pruning loop mutates.

    Attributes:
        params: Model parameters.
        bridge: Bridge parameters.
        mask: Live masks and importance vectors.
        a_norm: Normalized adjacency.
        prev_b: Variable survivors of the previous iteration.
        prev_p: Parameter survivors of the previous iteration.
        keep_b: Variables kept in the current iteration.
        keep_p: Parameter dims kept in the current iteration.
    """

    params: ModelParams
    bridge: BridgeParams
    mask: MaskState
    a_norm: np.ndarray
    prev_b: np.ndarray
    prev_p: np.ndarray
    keep_b: int
    keep_p: int

    def refresh_masks(self) -> None:
        """Recompute b and p from the live importance vectors."""
        self.mask.b = compute_mask(self.mask.b_hat.data, self.prev_b, pinned=self.mask.pinned, keep=self.keep_b)
        self.mask.p = compute_mask(self.mask.p_hat.data, self.prev_p, keep=self.keep_p)

    def parameters(self) -> List[Tensor]:
        return self.params.parameters() + self.bridge.parameters() + [self.mask.b_hat, self.mask.p_hat]

    def snapshot(self) -> Dict[str, Any]:
        return {
            "params": self.params.state_dict(),
            "bridge": self.bridge.state_dict(),
            "mask": self.mask.copy(),
        }

    def restore(self, snap: Dict[str, Any]) -> None:
        self.params.load_state_dict(snap["params"])
        self.bridge.load_state_dict(snap["bridge"])
        mask: MaskState = snap["mask"]
        self.mask.b = mask.b.copy()
        self.mask.p = mask.p.copy()
        self.mask.b_hat.data[...] = mask.b_hat.data
        self.mask.p_hat.data[...] = mask.p_hat.data


@dataclass
class TrainRecord:
    """What happened during train_vip.

    Attributes:
        iterations: One dict per iteration (k, retained counts, losses, val MAE, seconds).
        batch_masks: Selected variable indices of every batch, grouped by iteration.
        n: Variable count.
    """

    n: int
    iterations: List[Dict[str, Any]] = field(default_factory=list)
    batch_masks: List[List[List[int]]] = field(default_factory=list)

    def mask_log(self) -> List[List[np.ndarray]]:
        """Per-batch 0/1 variable masks grouped by iteration."""
        out = []
        for group in self.batch_masks:
            masks = []
            for selected in group:
                m = np.zeros(self.n, dtype=np.int8)
                m[selected] = 1
                masks.append(m)
            out.append(masks)
        return out


@dataclass
class VipResult:
    params: ModelParams
    bridge: BridgeParams
    mask: MaskState
    record: TrainRecord
    best_val_mae: float


def replay_loss(sample: ReplaySample, state: VipState, no_extra: bool = False) -> Tensor:
    """MAE of the model on a stored window, with masks rebuilt from its snapshots.

    The snapshot masks select among the live previous-iteration survivors at
    the current retention counts; the live b_hat / p_hat carry the gradients.
    """
    b = compute_mask(sample.b_hat_snapshot, state.prev_b, pinned=state.mask.pinned, keep=state.keep_b)
    p = compute_mask(sample.p_hat_snapshot, state.prev_p, keep=state.keep_p)
    window = WindowSample(sample.x_in, sample.x_out, sample.tod, sample.dow)
    trace = vip_trace(window, b, p, state.mask.b_hat, state.mask.p_hat, state.params, state.bridge, state.a_norm, no_extra)
    return main_loss(trace.output, sample.x_out)


def vip_iteration(
    k: int,
    train: WindowBatch,
    val: WindowBatch,
    state: VipState,
    buffer: ReplayBuffer,
    optimizer: Adam,
    cfg: TrainingConfig,
    schedule: PruneSchedule,
    rngs: Dict[str, np.random.Generator],
    record: TrainRecord,
    keep_best: bool = False,
    quiet: bool = False,
) -> Optional[Dict[str, Any]]:
    """Run pruning iteration k (see the module docstring for the batch steps).

    Args:
        keep_best: Track the best-validation state over this iteration's
            epochs and return it.

    Returns:
        Best snapshot (with "val_mae") when keep_best, else None.

    Raises:
        NumericError: If the loss diverges.
    """
    started = time.perf_counter()
    state.prev_b = state.mask.b.copy()
    state.prev_p = state.mask.p.copy()
    state.keep_b = schedule.variable_keep(k)
    state.keep_p = schedule.param_keep(k)
    if cfg.reset_optimizer:
        optimizer.reset()
    n, q = len(state.mask.b), len(state.mask.p)
    r1_count, r2_count = min(cfg.r1_count, n), min(cfg.r2_count, q)
    use_replay = not cfg.no_replay

    def forward(x: Window) -> Tensor:
        return forward_vip(x, state.mask, state.params, state.bridge, state.a_norm, cfg.no_extra)

    masks: List[List[int]] = []
    epoch_rows: List[Dict[str, float]] = []
    best: Optional[Dict[str, Any]] = None
    best_val = float("inf")
    bad_epochs = 0
    for epoch in range(1, cfg.epochs_per_iteration + 1):
        losses = []
        for batch in train.batches(cfg.batch_size, rngs["shuffle"].permutation(len(train))):
            state.refresh_masks()
            masks.append(state.mask.selected.tolist())
            optimizer.zero_grad()
            with GradTape() as tape:
                pred = forward(batch)
                main = main_loss(pred, batch.x_out)
                replayed = buffer.sample_for_replay(rngs["replay"]) if use_replay else None
                replay = replay_loss(replayed, state, cfg.no_extra) if replayed is not None else None
                r1 = random_reg_mask(n, r1_count, rngs["reg"])
                r2 = random_reg_mask(q, r2_count, rngs["reg"])
                total = sum_loss(main, replay, state.mask, r1, r2, cfg)
            _check_finite(total, f"iteration[{k}]")
            backward(total, tape)
            optimizer.step()
            losses.append(total.item())
            emit(
                "batch",
                quiet=quiet,
                iteration=k,
                epoch=epoch,
                loss=total.item(),
                main=main.item(),
                replay=replay.item() if replay is not None else None,
            )

            if use_replay:
                i = int(rngs["replay"].integers(len(batch)))
                window_loss = float(np.abs(pred.data[i] - batch.x_out[i]).mean())
                buffer.push(
                    ReplaySample.capture(
                        batch.x_in[i],
                        batch.x_out[i],
                        batch.tod[i],
                        batch.dow[i],
                        state.mask.b_hat.data,
                        state.mask.p_hat.data,
                        window_loss,
                        cfg.replay_policy,
                    ),
                    rngs["replay"],
                )

        state.refresh_masks()
        val_mae = validation_mae(forward, val, cfg.batch_size)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mae": val_mae}
        epoch_rows.append(row)
        emit("epoch", quiet=quiet, phase="vip", iteration=k, **row)
        if val_mae < best_val:
            best_val = val_mae
            bad_epochs = 0
            if keep_best:
                best = state.snapshot()
                best["val_mae"] = val_mae
        else:
            bad_epochs += 1
            if bad_epochs > cfg.iteration_patience:
                break

    state.refresh_masks()
    record.batch_masks.append(masks)
    summary = {
        "k": k,
        "retained_b": retained_count(schedule.n, schedule.r_b, k),
        "retained_p": retained_count(schedule.q, schedule.r_p, k),
        "kept_b": int(state.mask.b.sum()),
        "kept_p": int(state.mask.p.sum()),
        "epochs": len(epoch_rows),
        "train_loss": epoch_rows[-1]["train_loss"],
        "val_mae": epoch_rows[-1]["val_mae"],
        "buffer": len(buffer),
        "seconds": time.perf_counter() - started,
    }
    record.iterations.append(summary)
    emit("iteration", quiet=quiet, **summary)
    return best


def train_vip(
    train: WindowBatch,
    val: WindowBatch,
    a_norm: np.ndarray,
    dims: ModelDims,
    cfg: TrainingConfig,
    pretrained: Optional[ModelParams] = None,
    on_iteration: Optional[Callable[[int, VipState], None]] = None,
    quiet: bool = False,
) -> VipResult:
    """Prune from n variables down to the budget.

    Args:
        train: Normalized training windows.
        val: Normalized validation windows.
        a_norm: Normalized adjacency (n x n).
        dims: Model dimensions.
        cfg: Training settings; cfg.pretrained requires `pretrained`.
        pretrained: Converged base-model parameters to start from (copied).
        on_iteration: Called after every iteration (e.g. to checkpoint).
        quiet: Suppress per-batch events.

    Returns:
        Parameters, bridge and masks of the best-validation epoch of the
        final iteration, plus the TrainRecord.

    Raises:
        ConfigError: If the budget is invalid or cfg.pretrained lacks parameters.
    """
    n = a_norm.shape[0]
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("training needs non-empty train and validation windows")
    m, q_prime = cfg.resolve_targets(n, dims.q)
    schedule = PruneSchedule(n, dims.q, cfg.r_b, cfg.r_p, m, q_prime)

    if cfg.pretrained:
        if pretrained is None:
            raise ConfigError("pretrained=true needs a base-model checkpoint")
        if pretrained.n != n:
            raise ConfigError(f"checkpoint has n={pretrained.n}, dataset has n={n}")
        params = pretrained.copy()
    else:
        params = init_params(n, dims, derive_seed(cfg.seed, "init"))
    bridge = init_bridge(n, dims.q, dims.d_v, derive_seed(cfg.seed, "bridge"), extra_map=cfg.no_extra)
    mask = init_mask_state(a_norm, dims.q, derive_seed(cfg.seed, "mask"), cfg.pinned)
    state = VipState(params, bridge, mask, a_norm, mask.b.copy(), mask.p.copy(), n, dims.q)
    buffer = ReplayBuffer(cfg.buffer_capacity, cfg.replay_policy, cfg.alpha, seed=derive_seed(cfg.seed, "replay"))
    optimizer = Adam(state.parameters(), lr=cfg.lr)
    rngs = {name: make_rng(cfg.seed, name) for name in ("shuffle", "replay", "reg")}
    record = TrainRecord(n=n)

    best: Optional[Dict[str, Any]] = None
    for k in range(1, schedule.iterations + 1):
        final = k == schedule.iterations
        best = vip_iteration(k, train, val, state, buffer, optimizer, cfg, schedule, rngs, record, keep_best=final, quiet=quiet)
        if on_iteration is not None:
            on_iteration(k, state)

    best_val = float(record.iterations[-1]["val_mae"])
    if best is not None:
        state.restore(best)
        best_val = float(best["val_mae"])
    return VipResult(state.params, state.bridge, state.mask, record, best_val)
