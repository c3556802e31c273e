"""vipcast CLI entry point.

Usage:
    python -m vipcast synth [--config CONFIG] [--n 40] [--k-d 8] [--output-dir data/synth]
    python -m vipcast pretrain --values-path V --adjacency-path A [--output-dir runs/stmf]
    python -m vipcast train-vip --values-path V --adjacency-path A [--pretrained --checkpoint runs/stmf/final.npz]
    python -m vipcast select --method max-value --values-path V --adjacency-path A
    python -m vipcast evaluate --checkpoint runs/vip/final.npz --output-dir runs/vip
    python -m vipcast report runs/a runs/b [--output-dir reports]

Every RunConfig key is an option of every command (`--deployment-ratio 0.2`,
or `--deployment_ratio`); boolean keys are flags. Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, NoReturn, Optional, Sequence, Tuple

import numpy as np

from .baselines import hybrid_pin, run_selector, selection_mask
from .complexity import measured_param_count, stmf_flops, stmf_param_count, vip_flops
from .config import RunConfig, TrainingConfig, apply_overrides, config_keys, derive_seed, load_config
from .data import (
    AdjacencyMatrix,
    NormStats,
    RawSeries,
    WindowBatch,
    load_coords,
    load_dataset,
    make_window_batch,
    normalize_adjacency,
    normalize_series,
    split,
    zscore_fit,
    zscore_invert,
)
from .errors import ConfigError, NumericError, VipError
from .events import emit, error, warn
from .metrics import HorizonMetrics, horizon_metrics, jaccard_distance
from .model import ModelParams, Window, forward_stmf, init_params, load_checkpoint, save_checkpoint
from .pruning import MaskState
from .report import write_report
from .rundir import RunDir, read_record, read_selection, write_metrics_csv, write_record, write_selection, write_selection_result
from .synth import synth_generate, write_synth
from .tensor import Tensor
from .training import VipState, predict, pretrain, train_vip
from .vip import BridgeParams, forward_vip, init_bridge

COMMAND_HELP = {
    "synth": "Write a synthetic dataset with planted driver variables",
    "pretrain": "Train the full forecaster on all variables",
    "train-vip": "Prune the forecaster down to the variable and parameter budgets",
    "select": "Run a baseline variable selector",
    "evaluate": "Score a checkpoint on the val or test split",
    "report": "Compare finished run directories",
}


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that raises ConfigError instead of exiting on bad input."""

    def error(self, message: str) -> NoReturn:
        raise ConfigError(message)


def add_config_options(parser: argparse.ArgumentParser) -> None:
    """Declare --config, --quiet and one option per RunConfig key.

    Boolean keys are flags that switch the setting on; tuple keys take a
    comma-separated list. Options left out keep the config file's value.
    """
    parser.add_argument("--config", type=str, default="", help="Config file (.json, or key = value lines)")
    parser.add_argument("--quiet", "-q", action="store_true", help="Suppress per-batch events")
    for name, (section, hint) in config_keys().items():
        if name == "quiet":
            continue
        flags = [f"--{name.replace('_', '-')}"]
        if "_" in name:
            flags.append(f"--{name}")
        where = f"{section}.{name}" if section else name
        if hint is bool:
            parser.add_argument(*flags, dest=name, action="store_const", const=True, default=None, help=f"Enable {where}")
        elif getattr(hint, "__origin__", None) is tuple:
            parser.add_argument(*flags, dest=name, type=str, default=None, metavar="A,B,...", help=f"Override {where}")
        else:
            kind = hint if hint in (int, float) else str
            parser.add_argument(*flags, dest=name, type=kind, default=None, help=f"Override {where}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="vipcast",
        description="vipcast - forecasting all variables from a learned subset",
        allow_abbrev=False,
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=ArgumentParser)
    commands.required = True
    for command, help_text in COMMAND_HELP.items():
        sub = commands.add_parser(command, help=help_text, description=help_text, allow_abbrev=False)
        if command == "report":
            sub.add_argument("run_dirs", nargs="*", help="Run directories to compare")
        add_config_options(sub)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Load --config, then apply every option given on the command line."""
    cfg = load_config(args.config or None)
    overrides = [(name, getattr(args, name)) for name in config_keys() if getattr(args, name, None) is not None]
    cfg = apply_overrides(cfg, overrides)
    if args.quiet:
        cfg.quiet = True
    return cfg


def _require_file(path: str, key: str) -> Path:
    if not path:
        raise ConfigError(f"{key} is required for this command")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{key}: file not found: {path}")
    return p


def method_label(training: TrainingConfig) -> str:
    """Run label used to group runs in reports, e.g. "vip-pre+grid" or "vip-no-extra"."""
    if training.pin_full:
        return training.pin_method or "fixed"
    label = "vip-pre" if training.pretrained else "vip"
    if training.pin_method:
        label += f"+{training.pin_method}"
    for flag in ("no_extra", "no_b_reg", "no_p_reg", "no_replay"):
        if getattr(training, flag):
            label += "-" + flag.replace("_", "-")
    if training.replay_policy != "pvr":
        label += f"-{training.replay_policy}"
    if training.reg_norm != "l1":
        label += f"-{training.reg_norm}"
    return label


# ---------------------------------------------------------------------------
# Shared data preparation
# ---------------------------------------------------------------------------


@dataclass
class Prepared:
    """Loaded dataset, its splits and normalized windows."""

    series: RawSeries
    adjacency: AdjacencyMatrix
    coords: Optional[np.ndarray]
    raw: Dict[str, RawSeries]
    stats: NormStats
    windows: Dict[str, Optional[WindowBatch]]
    a_norm: np.ndarray


def prepare_data(cfg: RunConfig) -> Prepared:
    """Load, split, normalize with train statistics, and cut windows."""
    values_path = _require_file(cfg.values_path, "values_path")
    adjacency_path = _require_file(cfg.adjacency_path, "adjacency_path")
    coords_path = _require_file(cfg.coords_path, "coords_path") if cfg.coords_path else None
    series, adjacency = load_dataset(values_path, adjacency_path)
    coords = load_coords(coords_path, series.n) if coords_path is not None else None
    emit("dataset", n=series.n, T=series.T, interval_seconds=series.interval_seconds, edges=int(np.count_nonzero(adjacency.entries) // 2))

    dims = cfg.dims
    parts = split(series, cfg.split, min_length=dims.l + dims.l_out)
    raw = dict(zip(("train", "val", "test"), parts))
    stats = zscore_fit(raw["train"])
    windows = {
        name: make_window_batch(normalize_series(part, stats), dims.l, dims.l_out, cfg.stride, dims.steps_per_day, dims.days_per_week)
        for name, part in raw.items()
    }
    emit(
        "split",
        **{f"{name}_steps": part.T for name, part in raw.items()},
        **{f"{name}_windows": len(w) if w is not None else 0 for name, w in windows.items()},
        mean=stats.mean,
        std=stats.std,
    )
    return Prepared(series, adjacency, coords, raw, stats, windows, normalize_adjacency(adjacency))


def score(forward: Callable[[Window], Tensor], windows: WindowBatch, stats: NormStats, cfg: RunConfig) -> HorizonMetrics:
    """Per-horizon metrics in original units."""
    pred = predict(forward, windows, cfg.eval_batch_size)
    return horizon_metrics(zscore_invert(pred, stats), zscore_invert(windows.x_out, stats), cfg.mape_epsilon)


def _require_windows(prepared: Prepared, name: str) -> WindowBatch:
    w = prepared.windows[name]
    if w is None:
        raise ConfigError(f"{name} split is too short for one window")
    return w


def _norm_meta(stats: NormStats) -> Dict[str, float]:
    return {"mean": stats.mean, "std": stats.std}


def vip_arrays(bridge: BridgeParams, mask: MaskState) -> Dict[str, np.ndarray]:
    """Bridge tensors and mask state under checkpoint names."""
    arrays = bridge.state_dict()
    arrays.update(
        {
            "mask.b": mask.b.copy(),
            "mask.p": mask.p.copy(),
            "mask.b_hat": mask.b_hat.data.copy(),
            "mask.p_hat": mask.p_hat.data.copy(),
            "mask.pinned": np.asarray(mask.pinned, dtype=np.int64),
        }
    )
    return arrays


def vip_from_arrays(params: ModelParams, extra: Dict[str, np.ndarray]) -> Tuple[BridgeParams, MaskState]:
    """Rebuild the bridge and masks saved by vip_arrays."""
    has_extra = "bridge.extra_w1" in extra
    bridge = init_bridge(params.n, params.dims.q, params.dims.d_v, seed=0, extra_map=has_extra)
    bridge.load_state_dict({k: v for k, v in extra.items() if k.startswith("bridge.")})
    mask = MaskState(
        b=extra["mask.b"].astype(np.int8),
        p=extra["mask.p"].astype(np.int8),
        b_hat=Tensor(extra["mask.b_hat"], requires_grad=True, name="b_hat"),
        p_hat=Tensor(extra["mask.p_hat"], requires_grad=True, name="p_hat"),
        pinned=tuple(int(i) for i in extra.get("mask.pinned", np.zeros(0, dtype=np.int64))),
    )
    return bridge, mask.validate()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    seed = derive_seed(cfg.training.seed, "data")
    dataset = synth_generate(cfg.synth, seed)
    paths = write_synth(cfg.output_dir, dataset, cfg.synth, seed)
    emit("summary", command="synth", n=cfg.synth.n, T=cfg.synth.T_total, drivers=dataset.drivers, files=paths)
    return 0


def cmd_pretrain(cfg: RunConfig) -> int:
    prepared = prepare_data(cfg)
    train, val = _require_windows(prepared, "train"), _require_windows(prepared, "val")
    n = prepared.series.n
    if cfg.checkpoint:
        params, _, _ = load_checkpoint(_require_file(cfg.checkpoint, "checkpoint"))
        if params.n != n:
            raise ConfigError(f"checkpoint has n={params.n}, dataset has n={n}")
        emit("checkpoint", action="resume", path=cfg.checkpoint)
    else:
        params = init_params(n, cfg.dims, derive_seed(cfg.training.seed, "init"))

    run = RunDir(cfg.output_dir).create()
    run.write_config(cfg)
    params, history = pretrain(train, val, params, cfg.training, quiet=cfg.quiet)
    save_checkpoint(run.final, params, meta={"kind": "stmf", "method": "stmf", "seed": cfg.training.seed, "norm": _norm_meta(prepared.stats)})
    emit("checkpoint", action="save", path=str(run.final))

    metrics = score(lambda x: forward_stmf(x, params), val, prepared.stats, cfg)
    write_metrics_csv(run.val_metrics, metrics.to_frame())
    summary = {
        "method": "stmf",
        "seed": cfg.training.seed,
        "n": n,
        "m": n,
        "q_prime": cfg.dims.q,
        "split": "val",
        "epochs": len(history),
        "best_val_mae": min(row["val_mae"] for row in history),
        "metrics": metrics.summary(),
    }
    run.write_summary(summary)
    emit("summary", command="pretrain", **summary)
    return 0


def resolve_pinned(cfg: RunConfig, prepared: Prepared) -> Tuple[int, ...]:
    """Pinned variables from the config, a selection file, or a baseline selector."""
    training = cfg.training
    n = prepared.series.n
    if training.pinned:
        return tuple(training.pinned)
    if cfg.selection:
        return read_selection(_require_file(cfg.selection, "selection"), n).indices
    if not training.pin_method:
        return ()
    m, _ = training.resolve_targets(n, cfg.dims.q)
    count = m if training.pin_full else math.ceil(m / 2)
    first = run_selector(
        training.pin_method,
        count,
        prepared.raw["train"],
        prepared.adjacency,
        prepared.coords,
        seed=derive_seed(training.seed, "random-baseline"),
    )
    return first.indices if training.pin_full else hybrid_pin(first, m)


def cmd_train_vip(cfg: RunConfig) -> int:
    training = cfg.training
    pretrained: Optional[ModelParams] = None
    if training.pretrained:
        pretrained, _, _ = load_checkpoint(_require_file(cfg.checkpoint, "checkpoint"))
        if pretrained.dims != cfg.dims:
            warn("using model dims stored in the checkpoint", path=cfg.checkpoint)
            cfg.dims = pretrained.dims
    prepared = prepare_data(cfg)
    train, val = _require_windows(prepared, "train"), _require_windows(prepared, "val")
    n = prepared.series.n

    training.pinned = resolve_pinned(cfg, prepared)
    m, q_prime = training.resolve_targets(n, cfg.dims.q)
    label = method_label(training)
    emit("selection", stage="pinned", method=label, m=m, q_prime=q_prime, pinned=training.pinned)

    run = RunDir(cfg.output_dir).create()
    run.write_config(cfg)

    def on_iteration(k: int, state: VipState) -> None:
        path = run.iteration_checkpoint(k)
        save_checkpoint(path, state.params, vip_arrays(state.bridge, state.mask), meta={"kind": "vip", "k": k})
        emit("checkpoint", action="save", k=k, path=str(path))

    result = train_vip(train, val, prepared.a_norm, cfg.dims, training, pretrained, on_iteration, quiet=cfg.quiet)
    meta = {
        "kind": "vip",
        "method": label,
        "seed": training.seed,
        "no_extra": training.no_extra,
        "norm": _norm_meta(prepared.stats),
    }
    save_checkpoint(run.final, result.params, vip_arrays(result.bridge, result.mask), meta=meta)
    write_record(run.record, result.record)
    write_selection(run.selection, result.mask.selected, label, result.mask.b_hat.data)

    def forward(x: Window) -> Tensor:
        return forward_vip(x, result.mask, result.params, result.bridge, prepared.a_norm, training.no_extra)

    metrics = score(forward, val, prepared.stats, cfg)
    write_metrics_csv(run.val_metrics, metrics.to_frame())
    summary = {
        "method": label,
        "seed": training.seed,
        "n": n,
        "m": int(result.mask.b.sum()),
        "q_prime": int(result.mask.p.sum()),
        "split": "val",
        "iterations": len(result.record.iterations),
        "selected": result.mask.selected.tolist(),
        "best_val_mae": result.best_val_mae,
        "metrics": metrics.summary(),
    }
    run.write_summary(summary)
    emit("summary", command="train-vip", **summary)
    return 0


def cmd_select(cfg: RunConfig) -> int:
    prepared = prepare_data(cfg)
    n = prepared.series.n
    m, _ = cfg.training.resolve_targets(n, cfg.dims.q)
    result = run_selector(
        cfg.method,
        m,
        prepared.raw["train"],
        prepared.adjacency,
        prepared.coords,
        seed=derive_seed(cfg.training.seed, "random-baseline"),
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "selection.txt"
    write_selection_result(path, result)
    emit("summary", command="select", method=result.method, m=m, selected=result.indices, path=str(path))
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    params, extra, meta = load_checkpoint(_require_file(cfg.checkpoint, "checkpoint"))
    cfg.dims = params.dims
    prepared = prepare_data(cfg)
    n = prepared.series.n
    if params.n != n:
        raise ConfigError(f"checkpoint has n={params.n}, dataset has n={n}")
    windows = _require_windows(prepared, cfg.eval_split)
    method = str(meta.get("method", meta.get("kind", "unknown")))

    if meta.get("kind") == "vip":
        bridge, mask = vip_from_arrays(params, extra)
        if cfg.selection:
            chosen = read_selection(_require_file(cfg.selection, "selection"), n)
            mask.b = selection_mask(chosen.indices, n)
            mask.validate()
            method = chosen.method
        no_extra = bool(meta.get("no_extra", False))
        m, q_prime = int(mask.b.sum()), int(mask.p.sum())

        def forward(x: Window) -> Tensor:
            return forward_vip(x, mask, params, bridge, prepared.a_norm, no_extra)

        param_count = measured_param_count(params, bridge, mask, no_extra)
        flops = vip_flops(params.dims, n, m, q_prime, extrapolate=not no_extra, extra_map=no_extra)
    else:
        if cfg.selection:
            raise ConfigError("selection files apply to VIP checkpoints; train a pinned run with train-vip instead")
        m, q_prime = n, params.dims.q

        def forward(x: Window) -> Tensor:
            return forward_stmf(x, params)

        param_count = measured_param_count(params)
        flops = stmf_flops(params.dims, n)

    started = time.perf_counter()
    metrics = score(forward, windows, prepared.stats, cfg)
    seconds = time.perf_counter() - started

    out = RunDir(cfg.output_dir)
    out.path.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out.path / f"{cfg.eval_split}_metrics.csv", metrics.to_frame())
    evaluation = {
        "method": method,
        "seed": meta.get("seed", cfg.training.seed),
        "n": n,
        "m": m,
        "q_prime": q_prime,
        "split": cfg.eval_split,
        "metrics": metrics.summary(),
        "param_count": param_count,
        "stmf_param_count": stmf_param_count(params.dims, n),
        "flops": flops,
        "inference_seconds_per_window": seconds / len(windows),
    }
    if out.record.exists():
        groups = [masks for masks in read_record(out.record).mask_log() if len(masks) >= 2]
        if groups:
            evaluation["jaccard_distance"] = jaccard_distance(groups)
    (out.path / "evaluation.json").write_text(_dumps(evaluation))
    emit("metrics", split=cfg.eval_split, **metrics.summary())
    emit("summary", command="evaluate", **evaluation)
    return 0


def cmd_report(cfg: RunConfig, run_dirs: Sequence[str]) -> int:
    if not run_dirs:
        raise ConfigError("report needs at least one run directory")
    paths = write_report(run_dirs, cfg.output_dir)
    emit("report", runs=len(run_dirs), **paths)
    return 0


def _dumps(obj: Dict[str, object]) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def run(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    if args.command == "report":
        return cmd_report(cfg, args.run_dirs)
    commands: Dict[str, Callable[[RunConfig], int]] = {
        "synth": cmd_synth,
        "pretrain": cmd_pretrain,
        "train-vip": cmd_train_vip,
        "select": cmd_select,
        "evaluate": cmd_evaluate,
    }
    return commands[args.command](cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
        except SystemExit as e:  # --help
            return int(e.code or 0)
        return run(args)
    except NumericError as e:
        error(str(e), stage=e.stage, exit_code=e.exit_code)
        return e.exit_code
    except VipError as e:
        error(str(e), kind=type(e).__name__, exit_code=e.exit_code)
        return e.exit_code
    except (ValueError, OSError) as e:
        error(str(e), kind=type(e).__name__, exit_code=2)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
