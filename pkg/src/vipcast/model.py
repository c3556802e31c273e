"""Spatio-temporal attention forecaster.

Pipeline (all stages keep the (n, l, q) layout until the output head; an
optional leading batch axis is carried through every op):

    embed:     [input MLP(x) | node emb | tod emb | dow emb]     -> (n, l, q)
    temporal:  attention over the l steps of each variable       x temporal_layers
    spatial:   attention over the n variables at each step       x spatial_layers
    output:    linear map of the flattened l*q row of a variable -> (n, l')
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ModelDims
from .data import WindowBatch, WindowSample
from .errors import ConfigError, ContractError, ParseError
from .tensor import (
    Tensor,
    as_tensor,
    broadcast_to,
    concat,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mean,
    reshape,
    softmax_rows,
    stage,
    swapaxes,
    take,
)

CHECKPOINT_VERSION = 1
Window = Union[WindowSample, WindowBatch]


@dataclass
class EmbeddingTables:
    """Trainable lookup tables: tod (D, d_tod), dow (W, d_dow), node (n, d_v)."""

    tod: Tensor
    dow: Tensor
    node: Tensor


@dataclass
class AttentionLayer:
    """One attention block: Q/K/V projections, feed-forward and LayerNorm parameters."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def named(self) -> Dict[str, Tensor]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class ModelParams:
    """All trainable tensors of the forecaster.

    Attributes:
        dims: Model dimensions.
        n: Number of variables (rows of the node table).
        embeddings: tod / dow / node tables.
        input_w: (1, d) feature projection of each reading.
        input_b: (d,)
        layers: temporal layers first, then spatial layers.
        output_w: (l*q, l') output head.
        output_b: (l',)
    """

    dims: ModelDims
    n: int
    embeddings: EmbeddingTables
    input_w: Tensor
    input_b: Tensor
    layers: List[AttentionLayer] = field(default_factory=list)
    output_w: Optional[Tensor] = None
    output_b: Optional[Tensor] = None

    def named_tensors(self) -> Dict[str, Tensor]:
        """Every parameter under a stable dotted name."""
        out: Dict[str, Tensor] = {
            "embeddings.tod": self.embeddings.tod,
            "embeddings.dow": self.embeddings.dow,
            "embeddings.node": self.embeddings.node,
            "input.w": self.input_w,
            "input.b": self.input_b,
        }
        for i, layer in enumerate(self.layers):
            for k, t in layer.named().items():
                out[f"layers.{i}.{k}"] = t
        out["output.w"] = self.output_w  # type: ignore[assignment]
        out["output.b"] = self.output_b  # type: ignore[assignment]
        return out

    def parameters(self) -> List[Tensor]:
        return list(self.named_tensors().values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy values in place (shapes must match)."""
        for k, t in self.named_tensors().items():
            if k not in state:
                raise ContractError(f"missing tensor {k}")
            if state[k].shape != t.shape:
                raise ContractError(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data[...] = state[k]

    def copy(self) -> "ModelParams":
        clone = init_params(self.n, self.dims, seed=0)
        clone.load_state_dict(self.state_dict())
        return clone


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def _const(value: float, shape: Tuple[int, ...], name: str) -> Tensor:
    return Tensor(np.full(shape, value), requires_grad=True, name=name)


def init_params(n: int, dims: ModelDims, seed: int) -> ModelParams:
    """Initialize every weight from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Embedding tables use their width as fan_in; LayerNorm gains start at 1
    and biases at 0.

    Raises:
        ConfigError: If the dims are inconsistent or n < 1.
    """
    dims.validate()
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    q = dims.q
    emb = EmbeddingTables(
        tod=_uniform(rng, (dims.steps_per_day, dims.d_tod), dims.d_tod, "embeddings.tod"),
        dow=_uniform(rng, (dims.days_per_week, dims.d_dow), dims.d_dow, "embeddings.dow"),
        node=_uniform(rng, (n, dims.d_v), dims.d_v, "embeddings.node"),
    )
    params = ModelParams(
        dims=dims,
        n=n,
        embeddings=emb,
        input_w=_uniform(rng, (1, dims.d), 1, "input.w"),
        input_b=_uniform(rng, (dims.d,), 1, "input.b"),
    )
    for i in range(dims.num_layers):
        p = f"layers.{i}."
        params.layers.append(
            AttentionLayer(
                w_q=_uniform(rng, (q, q), q, p + "w_q"),
                w_k=_uniform(rng, (q, q), q, p + "w_k"),
                w_v=_uniform(rng, (q, q), q, p + "w_v"),
                ffn_w1=_uniform(rng, (q, dims.ffn_dim), q, p + "ffn_w1"),
                ffn_b1=_uniform(rng, (dims.ffn_dim,), q, p + "ffn_b1"),
                ffn_w2=_uniform(rng, (dims.ffn_dim, q), dims.ffn_dim, p + "ffn_w2"),
                ffn_b2=_uniform(rng, (q,), dims.ffn_dim, p + "ffn_b2"),
                ln1_gain=_const(1.0, (q,), p + "ln1_gain"),
                ln1_bias=_const(0.0, (q,), p + "ln1_bias"),
                ln2_gain=_const(1.0, (q,), p + "ln2_gain"),
                ln2_bias=_const(0.0, (q,), p + "ln2_bias"),
            )
        )
    params.output_w = _uniform(rng, (dims.l * q, dims.l_out), dims.l * q, "output.w")
    params.output_b = _uniform(rng, (dims.l_out,), dims.l * q, "output.b")
    return params


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


def window_arrays(x: Window) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(x_in, tod, dow) of a sample or batch."""
    return np.asarray(x.x_in, dtype=np.float64), np.asarray(x.tod), np.asarray(x.dow)


def embed(
    x: Window,
    params: ModelParams,
    rows: Optional[Sequence[int]] = None,
) -> Tensor:
    """Aggregated features E_all = [E_f | E_node | E_tod | E_dow].

    Args:
        x: Normalized window(s), x_in of shape (..., n, l).
        params: Model parameters.
        rows: If given, embed only these variables (in this order) with
            their own node embeddings.

    Returns:
        Tensor of shape (..., len(rows) or n, l, q).

    Raises:
        ContractError: If a temporal index is out of range.
    """
    dims = params.dims
    x_in, tod, dow = window_arrays(x)
    if rows is not None:
        x_in = np.take(x_in, np.asarray(rows, dtype=np.intp), axis=-2)
    lead = x_in.shape[:-2]
    s, l = x_in.shape[-2:]
    if l != dims.l:
        raise ContractError(f"window length {l} != l = {dims.l}")

    features = matmul(as_tensor(x_in[..., None]), params.input_w) + params.input_b

    node_table = params.embeddings.node if rows is None else take(params.embeddings.node, rows, axis=0)
    node = broadcast_to(reshape(node_table, (s, 1, dims.d_v)), lead + (s, l, dims.d_v))

    def temporal(table: Tensor, index: np.ndarray, width: int) -> Tensor:
        looked_up = embedding(table, index)
        return broadcast_to(reshape(looked_up, index.shape[:-1] + (1, l, width)), lead + (s, l, width))

    e_tod = temporal(params.embeddings.tod, tod, dims.d_tod)
    e_dow = temporal(params.embeddings.dow, dow, dims.d_dow)
    return concat([features, node, e_tod, e_dow], axis=-1)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def head_columns(columns: Sequence[int], q: int, num_heads: int) -> List[np.ndarray]:
    """Positions (within `columns`) of the retained columns of each head.

    Column j belongs to head j // (q / num_heads).
    """
    cols = np.asarray(columns, dtype=np.intp)
    d_h = q // num_heads
    owner = cols // d_h
    return [np.flatnonzero(owner == h) for h in range(num_heads)]


def attention(
    e: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    num_heads: int,
    columns: Optional[Sequence[int]] = None,
    v_gate: Optional[Tensor] = None,
) -> Tensor:
    """Multi-head attention over axis -2 of e (..., s, t, q).

    Args:
        e: Input representation.
        w_q, w_k, w_v: (q, q) projections.
        num_heads: Head count; head h owns columns [h*d_h, (h+1)*d_h).
        columns: Retained Q/K columns (sorted). None keeps all.
        v_gate: Optional (q,) elementwise gate applied to e @ w_v.

    Returns:
        Tensor of the same shape as e. Each head scores with its retained
        columns scaled by sqrt(d_h); a head without retained columns
        averages its value block uniformly.
    """
    q = e.shape[-1]
    t = e.shape[-2]
    d_h = q // num_heads
    scale = 1.0 / np.sqrt(d_h)
    if columns is None:
        columns = np.arange(q)
        wq, wk = w_q, w_k
    else:
        columns = np.asarray(columns, dtype=np.intp)
        wq, wk = take(w_q, columns, axis=1), take(w_k, columns, axis=1)
    qs = matmul(e, wq)
    ks = matmul(e, wk)
    vs = matmul(e, w_v)
    if v_gate is not None:
        vs = vs * v_gate

    heads: List[Tensor] = []
    for h, positions in enumerate(head_columns(columns, q, num_heads)):
        v_h = take(vs, np.arange(h * d_h, (h + 1) * d_h), axis=-1)
        if positions.size == 0:
            heads.append(broadcast_to(mean(v_h, axis=-2, keepdims=True), v_h.shape))
            continue
        if positions.size == len(columns):
            q_h, k_h = qs, ks
        else:
            q_h, k_h = take(qs, positions, axis=-1), take(ks, positions, axis=-1)
        scores = matmul(q_h, swapaxes(k_h, -1, -2)) * scale
        heads.append(matmul(softmax_rows(scores), v_h))
    return heads[0] if len(heads) == 1 else concat(heads, axis=-1)


def temporal_attention(
    e: Tensor,
    layer: AttentionLayer,
    num_heads: int,
    columns: Optional[Sequence[int]] = None,
    v_gate: Optional[Tensor] = None,
) -> Tensor:
    """Attention across the l time steps of each variable; e is (..., n, l, q)."""
    return attention(e, layer.w_q, layer.w_k, layer.w_v, num_heads, columns, v_gate)


def spatial_attention(
    h: Tensor,
    layer: AttentionLayer,
    num_heads: int,
    columns: Optional[Sequence[int]] = None,
    v_gate: Optional[Tensor] = None,
) -> Tensor:
    """Attention across the variables at each step: temporal attention on the transposed input."""
    swapped = swapaxes(h, -3, -2)
    return swapaxes(temporal_attention(swapped, layer, num_heads, columns, v_gate), -3, -2)


def feed_forward(x: Tensor, layer: AttentionLayer) -> Tensor:
    return matmul(gelu(matmul(x, layer.ffn_w1) + layer.ffn_b1), layer.ffn_w2) + layer.ffn_b2


def attention_block(
    h: Tensor,
    layer: AttentionLayer,
    dims: ModelDims,
    spatial: bool,
    columns: Optional[Sequence[int]] = None,
    v_gate: Optional[Tensor] = None,
) -> Tensor:
    """Attention sublayer then feed-forward sublayer.

    With dims.residual each sublayer is wrapped as LayerNorm(x + sublayer(x)).
    """
    attend = spatial_attention if spatial else temporal_attention
    a = attend(h, layer, dims.num_heads, columns, v_gate)
    x = layer_norm(h + a, layer.ln1_gain, layer.ln1_bias) if dims.residual else a
    f = feed_forward(x, layer)
    return layer_norm(x + f, layer.ln2_gain, layer.ln2_bias) if dims.residual else f


def encode(
    e: Tensor,
    params: ModelParams,
    columns: Optional[Sequence[int]] = None,
    v_gate: Optional[Tensor] = None,
) -> Tensor:
    """Run the temporal stack then the spatial stack on embedded features."""
    dims = params.dims
    h = e
    for i, layer in enumerate(params.layers):
        spatial = i >= dims.temporal_layers
        label = f"spatial[{i - dims.temporal_layers}]" if spatial else f"temporal[{i}]"
        with stage(label):
            h = attention_block(h, layer, dims, spatial, columns, v_gate)
    return h


def output_head(h: Tensor, params: ModelParams) -> Tensor:
    """Map (..., n, l, q) to (..., n, l') through the flattened l*q row."""
    with stage("output"):
        flat = reshape(h, h.shape[:-2] + (h.shape[-2] * h.shape[-1],))
        return matmul(flat, params.output_w) + params.output_b


def forward_stmf(x: Window, params: ModelParams) -> Tensor:
    """Forecast all variables from all variables.

    Returns:
        (n, l') for a WindowSample, (B, n, l') for a WindowBatch.

    Raises:
        NumericError: On non-finite values, naming the stage.
    """
    with stage("embed"):
        e = embed(x, params)
    return output_head(encode(e, params), params)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: Union[str, Path],
    params: ModelParams,
    extra: Optional[Dict[str, np.ndarray]] = None,
    meta: Optional[Dict[str, object]] = None,
) -> None:
    """Write params (plus extra named arrays) to an .npz archive.

    A JSON `__meta__` entry records the format version, dims, n and the
    tensor names.
    """
    arrays: Dict[str, np.ndarray] = {f"params.{k}": v for k, v in params.state_dict().items()}
    for k, v in (extra or {}).items():
        arrays[k] = np.asarray(v)
    header = {
        "version": CHECKPOINT_VERSION,
        "dims": asdict(params.dims),
        "n": params.n,
        "tensors": sorted(arrays),
        "meta": meta or {},
    }
    arrays["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelParams, Dict[str, np.ndarray], Dict[str, object]]:
    """Read an archive written by save_checkpoint.

    Returns:
        (params, extra arrays, meta)

    Raises:
        FileNotFoundError: If the file is missing.
        ParseError: If the archive is not a vipcast checkpoint.
    """
    with np.load(path, allow_pickle=False) as archive:
        if "__meta__" not in archive.files:
            raise ParseError("not a vipcast checkpoint (no __meta__)", str(path))
        header = json.loads(str(archive["__meta__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ParseError(f"unsupported checkpoint version {header.get('version')}", str(path))
        arrays = {k: archive[k].copy() for k in archive.files if k != "__meta__"}
    dims = ModelDims(**header["dims"])
    params = init_params(int(header["n"]), dims, seed=0)
    prefix = "params."
    params.load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    extra = {k: v for k, v in arrays.items() if not k.startswith(prefix)}
    return params, extra, header.get("meta", {})
