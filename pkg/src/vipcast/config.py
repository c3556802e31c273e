"""Configuration loading and data structures for vipcast."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, get_type_hints

import numpy as np

from .errors import ConfigError, ParseError

REPLAY_POLICIES = ("pvr", "rand-er", "in-pvr")
REG_NORMS = ("l1", "l2", "elasticnet", "none")
PIN_METHODS = ("", "max-value", "max-connectivity", "grid", "random")


@dataclass
class ModelDims:
    """Model dimensions.

    Attributes:
        q: Width of the aggregated representation; must equal d + d_tod + d_dow + d_v.
        d: Feature embedding width produced by the input MLP.
        d_tod: Time-of-day embedding width.
        d_dow: Day-of-week embedding width.
        d_v: Node embedding width.
        num_layers: Total attention layers L.
        num_heads: Attention heads per layer (q must be divisible by it).
        temporal_layers: How many of the L layers attend over time; the rest attend over variables.
        steps_per_day: D, number of intervals per day.
        days_per_week: W.
        ffn_dim: Hidden width of the feed-forward sublayer.
        l: Input window length.
        l_out: Forecast horizon l'.
        residual: Wrap each attention and feed-forward sublayer in residual + LayerNorm.
        bridge_softmax: Row-softmax the extrapolation bridge (off: plain GeLU similarity).
    """

    q: int = 152
    d: int = 24
    d_tod: int = 24
    d_dow: int = 24
    d_v: int = 80
    num_layers: int = 6
    num_heads: int = 4
    temporal_layers: int = 3
    steps_per_day: int = 288
    days_per_week: int = 7
    ffn_dim: int = 256
    l: int = 12
    l_out: int = 12
    residual: bool = True
    bridge_softmax: bool = False

    @property
    def head_dim(self) -> int:
        return self.q // self.num_heads

    @property
    def spatial_layers(self) -> int:
        return self.num_layers - self.temporal_layers

    def validate(self) -> "ModelDims":
        total = self.d + self.d_tod + self.d_dow + self.d_v
        if total != self.q:
            raise ConfigError(
                f"d + d_tod + d_dow + d_v = {total} does not match q = {self.q}"
            )
        for name in ("q", "d", "d_tod", "d_dow", "d_v", "num_heads", "steps_per_day", "days_per_week", "ffn_dim", "l", "l_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.q % self.num_heads:
            raise ConfigError(f"q = {self.q} is not divisible by num_heads = {self.num_heads}")
        if not 0 <= self.temporal_layers <= self.num_layers:
            raise ConfigError(f"temporal_layers must be in [0, {self.num_layers}]")
        return self


@dataclass
class TrainingConfig:
    """Pruning, loss, replay and optimizer settings.

    target_m / target_q_prime of 0 mean "derive from deployment_ratio /
    param_ratio" (see resolve_targets). pin_method pins ceil(m/2) variables
    chosen by a baseline selector, or all m with pin_full.
    """

    r_b: float = 0.10
    r_p: float = 0.05
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0
    r1_count: int = 2
    r2_count: int = 1
    alpha: float = 0.6
    buffer_capacity: int = 288 * 7
    lr: float = 1e-3
    batch_size: int = 64
    epochs_per_iteration: int = 5
    iteration_patience: int = 2
    target_m: int = 0
    target_q_prime: int = 0
    deployment_ratio: float = 0.1
    param_ratio: float = 0.5
    pretrained: bool = False
    pretrain_epochs: int = 200
    pretrain_patience: int = 10
    reset_optimizer: bool = False
    no_extra: bool = False
    no_b_reg: bool = False
    no_p_reg: bool = False
    no_replay: bool = False
    replay_policy: str = "pvr"
    reg_norm: str = "l1"
    pinned: Tuple[int, ...] = ()
    pin_method: str = ""
    pin_full: bool = False
    seed: int = 0

    def validate(self) -> "TrainingConfig":
        for name in ("r_b", "r_p"):
            rate = getattr(self, name)
            if not 0.0 < rate < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {rate}")
        for name in ("gamma1", "gamma2", "gamma3", "alpha", "lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("buffer_capacity", "batch_size", "epochs_per_iteration"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("r1_count", "r2_count", "iteration_patience", "pretrain_epochs", "pretrain_patience", "target_m", "target_q_prime"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 < self.deployment_ratio < 1.0 or not 0.0 < self.param_ratio <= 1.0:
            raise ConfigError("deployment_ratio must be in (0, 1) and param_ratio in (0, 1]")
        if self.replay_policy not in REPLAY_POLICIES:
            raise ConfigError(f"replay_policy must be one of {REPLAY_POLICIES}, got {self.replay_policy!r}")
        if self.reg_norm not in REG_NORMS:
            raise ConfigError(f"reg_norm must be one of {REG_NORMS}, got {self.reg_norm!r}")
        if self.pin_method not in PIN_METHODS:
            raise ConfigError(f"pin_method must be one of {PIN_METHODS[1:]}, got {self.pin_method!r}")
        if len(set(self.pinned)) != len(self.pinned):
            raise ConfigError("pinned indices must be distinct")
        return self

    def resolve_targets(self, n: int, q: int) -> Tuple[int, int]:
        """Return (target_m, target_q') for a dataset with n variables and width q.

        Raises:
            ConfigError: If target_m >= n, target_q' >= q, or pinned does not fit.
        """
        m = self.target_m or max(1, math.floor(n * self.deployment_ratio + 1e-9))
        q_prime = self.target_q_prime or max(1, math.floor(q * self.param_ratio + 1e-9))
        if not 1 <= m < n:
            raise ConfigError(f"target_m must be in [1, {n}), got {m}")
        if not 1 <= q_prime <= q:
            raise ConfigError(f"target_q_prime must be in [1, {q}], got {q_prime}")
        if len(self.pinned) > m:
            raise ConfigError(f"{len(self.pinned)} pinned variables exceed the budget m = {m}")
        if any(not 0 <= i < n for i in self.pinned):
            raise ConfigError(f"pinned indices must be in [0, {n})")
        return m, q_prime


@dataclass
class SynthConfig:
    """Synthetic dataset generator settings."""

    n: int = 40
    T_total: int = 4000
    k_d: int = 8
    noise: float = 0.1
    period: int = 288
    interval_seconds: int = 300
    start_offset: int = 0
    fan_in: int = 2
    ar_std: float = 3.0

    def validate(self) -> "SynthConfig":
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if not 1 <= self.k_d < self.n:
            raise ConfigError(f"k_d must be in [1, n), got k_d={self.k_d} for n={self.n}")
        if self.T_total < 2 or self.period < 2 or self.interval_seconds < 1:
            raise ConfigError("T_total and period must be >= 2, interval_seconds >= 1")
        if self.noise < 0 or self.ar_std < 0:
            raise ConfigError("noise and ar_std must be >= 0")
        if not 1 <= self.fan_in:
            raise ConfigError("fan_in must be >= 1")
        if self.start_offset < 0:
            raise ConfigError("start_offset must be >= 0")
        return self


@dataclass
class RunConfig:
    """Everything one CLI command needs.

    Attributes:
        values_path: Value-matrix CSV.
        adjacency_path: Edge-list CSV.
        coords_path: Optional "index,x,y" CSV (grid baseline).
        split: Train/val/test ratios (sum to 1).
        output_dir: Run directory (or dataset directory for synth).
        checkpoint: STMF checkpoint to load (pretrained VIP, evaluate, resume).
        selection: Selection file to evaluate.
        method: Baseline selector name for `select`.
        mape_epsilon: Truth magnitudes below this are excluded from MAPE.
        eval_split: Split scored by `evaluate` ("val" or "test").
        eval_batch_size: Windows per forward pass during evaluation.
        stride: Window stride.
        quiet: Suppress per-batch events.
    """

    values_path: str = ""
    adjacency_path: str = ""
    coords_path: str = ""
    split: Tuple[float, float, float] = (0.7, 0.15, 0.15)
    output_dir: str = "runs/default"
    checkpoint: str = ""
    selection: str = ""
    method: str = "max-value"
    mape_epsilon: float = 1.0
    eval_split: str = "test"
    eval_batch_size: int = 256
    stride: int = 1
    quiet: bool = False
    dims: ModelDims = field(default_factory=ModelDims)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> "RunConfig":
        self.dims.validate()
        self.training.validate()
        self.synth.validate()
        if len(self.split) != 3 or any(r <= 0 for r in self.split):
            raise ConfigError("split must be three positive ratios")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {sum(self.split)}")
        if self.stride < 1 or self.eval_batch_size < 1:
            raise ConfigError("stride and eval_batch_size must be >= 1")
        if self.mape_epsilon < 0:
            raise ConfigError("mape_epsilon must be >= 0")
        if self.eval_split not in ("val", "test"):
            raise ConfigError(f"eval_split must be val or test, got {self.eval_split!r}")
        return self


_SECTIONS = ("dims", "training", "synth")


def config_keys() -> Dict[str, Tuple[Optional[str], Any]]:
    """Map every flat key to (section or None, field type)."""
    index: Dict[str, Tuple[Optional[str], Any]] = {}
    run_hints = get_type_hints(RunConfig)
    for f in fields(RunConfig):
        if f.name not in _SECTIONS:
            index[f.name] = (None, run_hints[f.name])
    for section, cls in zip(_SECTIONS, (ModelDims, TrainingConfig, SynthConfig)):
        hints = get_type_hints(cls)
        for f in fields(cls):
            index[f.name] = (section, hints[f.name])
    return index


BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True, "false": False, "0": False, "no": False, "off": False}


def _coerce(key: str, value: Any, hint: Any) -> Any:
    try:
        if hint is bool:
            if isinstance(value, bool):
                return value
            word = str(value).strip().lower()
            if word not in BOOL_WORDS:
                raise ValueError(value)
            return BOOL_WORDS[word]
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if hint is float:
            return float(value)
        if hint is str:
            return str(value)
        if getattr(hint, "__origin__", None) is tuple:
            item_type = hint.__args__[0]
            if isinstance(value, str):
                items: Iterable[Any] = [v for v in value.replace(";", ",").split(",") if v.strip()]
            elif isinstance(value, (list, tuple)):
                items = value
            else:
                items = [value]
            return tuple(_coerce(key, v, item_type) for v in items)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {key}: {value!r}") from None
    raise ConfigError(f"unsupported type for {key}")


def _lookup(key: str) -> Tuple[str, Optional[str], Any]:
    name = key.strip().replace("-", "_")
    if "." in name:
        _, name = name.split(".", 1)
    index = config_keys()
    if name not in index:
        raise ConfigError(f"unknown config key: {key}")
    section, hint = index[name]
    return name, section, hint


def set_value(cfg: RunConfig, key: str, value: Any) -> None:
    """Set one flat (`q`) or dotted (`dims.q`) key on a RunConfig.

    Raises:
        ConfigError: If the key is unknown or the value cannot be coerced.
    """
    name, section, hint = _lookup(key)
    target = cfg if section is None else getattr(cfg, section)
    setattr(target, name, _coerce(key, value, hint))


def _flatten(data: Dict[str, Any]) -> List[Tuple[str, Any]]:
    pairs: List[Tuple[str, Any]] = []
    for key, value in data.items():
        if key in _SECTIONS and isinstance(value, dict):
            pairs.extend(value.items())
        else:
            pairs.append((key, value))
    return pairs


def parse_key_values(text: str, path: Optional[str] = None) -> List[Tuple[str, str]]:
    """Parse `key = value` lines; blank lines and `#` comments are ignored."""
    pairs: List[Tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw.strip()!r}", path, lineno)
        key, value = line.split("=", 1)
        if not key.strip():
            raise ParseError("empty key", path, lineno)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path: Optional[str] = None) -> RunConfig:
    """Load a RunConfig from a JSON or key=value file.

    If path is None or empty, returns the default config. Relative paths
    resolve against the working directory. Files ending in
    `.json` hold a JSON object, flat or with `dims` / `training` / `synth`
    sections; any other file holds `key = value` lines.

    Args:
        path: Path to a config file, or None for defaults.

    Returns:
        Validated RunConfig.

    Raises:
        FileNotFoundError: If the file cannot be found.
        ConfigError: On unknown keys or invalid values.
    """
    cfg = RunConfig()
    if not path:
        return cfg.validate()

    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, str(p), e.lineno) from None
        if not isinstance(data, dict):
            raise ParseError("top level must be a JSON object", str(p))
        pairs: List[Tuple[str, Any]] = _flatten(data)
    else:
        pairs = list(parse_key_values(text, str(p)))
    for key, value in pairs:
        set_value(cfg, key, value)
    return cfg.validate()


def apply_overrides(cfg: RunConfig, overrides: Iterable[Tuple[str, Any]]) -> RunConfig:
    """Apply (key, value) overrides on top of a loaded config and re-validate."""
    for key, value in overrides:
        set_value(cfg, key, value)
    return cfg.validate()


def config_to_dict(cfg: Any) -> Dict[str, Any]:
    """Nested dict of a config dataclass (tuples become lists)."""
    if not is_dataclass(cfg):
        raise ConfigError("config_to_dict expects a dataclass instance")
    return json.loads(json.dumps(asdict(cfg)))


def derive_seed(seed: int, name: str) -> int:
    """Derive an independent named sub-seed from the run seed.

    Sub-seed names used: data, init, bridge, replay, reg, mask, shuffle,
    random-baseline.
    """
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def make_rng(seed: int, name: str) -> np.random.Generator:
    """numpy Generator seeded with derive_seed(seed, name)."""
    return np.random.default_rng(derive_seed(seed, name))
