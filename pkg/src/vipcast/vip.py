"""Masked forecaster: forecasts all n variables from the m selected ones.

forward_vip runs the base model on the selected rows only, with Q/K
projections restricted to the retained parameter columns and the value
projection gated by p_hat, then extrapolates the m representations to all
n variables:

    B  = gelu(FC(E_node[b]) FC(E_node)^T)            (m, n)   bridge
    A' = b_hat[b] * A_norm[b] + B                     (m, n)   fused adjacency
    H  = A'^T H[b]                                    (n, l, q)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ContractError
from .model import (
    AttentionLayer,
    ModelParams,
    Window,
    embed,
    encode,
    output_head,
    temporal_attention,
)
from .pruning import MaskState
from .tensor import (
    Tensor,
    as_tensor,
    gelu,
    matmul,
    reshape,
    softmax_rows,
    stage,
    swapaxes,
    take,
    transpose,
)


@dataclass
class BridgeParams:
    """Shared projection FC (d_v -> d_v) of the bridge.

    With extra_w1 set, also holds the MLP that replaces extrapolation in the
    no_extra ablation: per time step it maps the flattened (m * q) features
    of the selected variables through a d_v-wide hidden layer to (n * q).
    extra_w1 is (n, q, d_v) and is gathered by the selected rows, so any m
    fits.
    """

    fc_w: Tensor
    fc_b: Tensor
    extra_w1: Optional[Tensor] = None
    extra_b1: Optional[Tensor] = None
    extra_w2: Optional[Tensor] = None
    extra_b2: Optional[Tensor] = None

    @property
    def has_extra_map(self) -> bool:
        return self.extra_w1 is not None

    def named_tensors(self) -> Dict[str, Tensor]:
        tensors = {
            "bridge.fc_w": self.fc_w,
            "bridge.fc_b": self.fc_b,
            "bridge.extra_w1": self.extra_w1,
            "bridge.extra_b1": self.extra_b1,
            "bridge.extra_w2": self.extra_w2,
            "bridge.extra_b2": self.extra_b2,
        }
        return {k: t for k, t in tensors.items() if t is not None}

    def parameters(self) -> List[Tensor]:
        return list(self.named_tensors().values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for k, t in self.named_tensors().items():
            if k in state:
                if state[k].shape != t.shape:
                    raise ContractError(f"{k}: shape {state[k].shape} != {t.shape}")
                t.data[...] = state[k]


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, name=name)


def init_bridge(n: int, q: int, d_v: int, seed: int, extra_map: bool = False) -> BridgeParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.

    Args:
        extra_map: Also allocate the no_extra ablation MLP.
    """
    rng = np.random.default_rng(seed)
    bridge = BridgeParams(
        fc_w=_uniform(rng, (d_v, d_v), d_v, "bridge.fc_w"),
        fc_b=_uniform(rng, (d_v,), d_v, "bridge.fc_b"),
    )
    if extra_map:
        bridge.extra_w1 = _uniform(rng, (n, q, d_v), q, "bridge.extra_w1")
        bridge.extra_b1 = _uniform(rng, (d_v,), q, "bridge.extra_b1")
        bridge.extra_w2 = _uniform(rng, (d_v, n * q), d_v, "bridge.extra_w2")
        bridge.extra_b2 = _uniform(rng, (n * q,), d_v, "bridge.extra_b2")
    return bridge


@dataclass
class MaskedForward:
    """Intermediates of one masked forward pass.

    Attributes:
        e_masked: (..., m, l, q) aggregated features of the selected variables.
        h_masked: (..., m, l, q) output of the attention stacks.
        bridge: (m, n) similarity bridge (None in the no_extra ablation).
        a_fused: (m, n) fused adjacency (None in the no_extra ablation).
        h_full: (..., n, l, q) extrapolated representation.
        output: (..., n, l') forecasts.
    """

    e_masked: Tensor
    h_masked: Tensor
    bridge: Optional[Tensor]
    a_fused: Optional[Tensor]
    h_full: Tensor
    output: Tensor


def _selected(mask: np.ndarray) -> np.ndarray:
    sel = np.flatnonzero(np.asarray(mask))
    if sel.size == 0:
        raise ContractError("mask selects nothing")
    return sel


def masked_attention(
    e: Tensor,
    p: np.ndarray,
    p_hat: Tensor,
    layer: AttentionLayer,
    num_heads: int,
) -> Tensor:
    """softmax(Q^ K^T / sqrt(d_h)) V^ with Q^, K^ from the retained columns
    of W_Q, W_K and V^ = p_hat * (e W_V)."""
    return temporal_attention(e, layer, num_heads, columns=_selected(p), v_gate=p_hat)


def extrapolation_bridge(
    node_emb: Tensor,
    b: np.ndarray,
    fc: BridgeParams,
    row_softmax: bool = False,
) -> Tensor:
    """B = gelu(FC(E_node[b]) FC(E_node)^T), shape (m, n).

    Args:
        node_emb: (n, d_v) node embeddings.
        b: 0/1 variable mask.
        fc: Bridge parameters; the same projection is applied to both sides.
        row_softmax: Normalize each row with a softmax after the GeLU.
    """
    projected = matmul(node_emb, fc.fc_w) + fc.fc_b
    scores = matmul(take(projected, _selected(b), axis=0), transpose(projected))
    out = gelu(scores)
    return softmax_rows(out) if row_softmax else out


def fuse_adjacency(
    b_hat: Tensor,
    a_norm: np.ndarray,
    b: np.ndarray,
    bridge: Tensor,
) -> Tensor:
    """A' = b_hat[b] * A_norm[b] + B, with b_hat[b] scaling each row.

    Raises:
        ContractError: If the bridge is not (m, n) or a_norm is not (n, n).
    """
    sel = _selected(b)
    n = len(b)
    a_norm = np.asarray(a_norm, dtype=np.float64)
    if a_norm.shape != (n, n):
        raise ContractError(f"a_norm shape {a_norm.shape} != ({n}, {n})")
    if tuple(bridge.shape) != (sel.size, n):
        raise ContractError(f"bridge shape {bridge.shape} != ({sel.size}, {n})")
    weights = reshape(take(as_tensor(b_hat), sel, axis=0), (sel.size, 1))
    return weights * a_norm[sel] + bridge


def propagate(a_fused: Tensor, h_masked: Tensor) -> Tensor:
    """H = A'^T H[b] along the variable axis: (m, n), (..., m, l, q) -> (..., n, l, q)."""
    a_fused = as_tensor(a_fused)
    m, n = a_fused.shape
    if h_masked.shape[-3] != m:
        raise ContractError(f"h_masked has {h_masked.shape[-3]} variables, a_fused has {m} rows")
    lead = h_masked.shape[:-3]
    l, q = h_masked.shape[-2:]
    flat = reshape(h_masked, lead + (m, l * q))
    return reshape(matmul(transpose(a_fused), flat), lead + (n, l, q))


def extra_map(h_masked: Tensor, b: np.ndarray, bridge: BridgeParams) -> Tensor:
    """No-extrapolation ablation: (..., m, l, q) -> (..., n, l, q) through an
    MLP over the flattened (m * q) features of each time step.

    Raises:
        ContractError: If the bridge has no ablation MLP or the row count
            disagrees with b.
    """
    if not bridge.has_extra_map:
        raise ContractError("bridge has no extra map; build it with init_bridge(..., extra_map=True)")
    sel = _selected(b)
    n = len(b)
    m, l, q = h_masked.shape[-3:]
    if m != sel.size:
        raise ContractError(f"h_masked has {m} variables, b selects {sel.size}")
    lead = h_masked.shape[:-3]
    hidden = bridge.extra_w1.shape[-1]
    flat = reshape(swapaxes(h_masked, -3, -2), lead + (l, m * q))
    w1 = reshape(take(bridge.extra_w1, sel, axis=0), (m * q, hidden))
    z = gelu(matmul(flat, w1) + bridge.extra_b1)
    out = reshape(matmul(z, bridge.extra_w2) + bridge.extra_b2, lead + (l, n, q))
    return swapaxes(out, -3, -2)


def vip_trace(
    x: Window,
    b: np.ndarray,
    p: np.ndarray,
    b_hat: Tensor,
    p_hat: Tensor,
    params: ModelParams,
    bridge: BridgeParams,
    a_norm: np.ndarray,
    no_extra: bool = False,
) -> MaskedForward:
    """Masked forward pass with explicit masks; returns every intermediate.

    Raises:
        NumericError: On non-finite values, naming the stage.
    """
    dims = params.dims
    sel = _selected(b)
    columns = _selected(p)
    with stage("embed"):
        e = embed(x, params, rows=sel)
    h = encode(e, params, columns=columns, v_gate=p_hat)
    with stage("extrapolation"):
        if no_extra:
            similarity = a_fused = None
            h_full = extra_map(h, b, bridge)
        else:
            similarity = extrapolation_bridge(params.embeddings.node, b, bridge, dims.bridge_softmax)
            a_fused = fuse_adjacency(b_hat, a_norm, b, similarity)
            h_full = propagate(a_fused, h)
    out = output_head(h_full, params)
    return MaskedForward(e, h, similarity, a_fused, h_full, out)


def forward_vip(
    x: Window,
    mask: MaskState,
    params: ModelParams,
    bridge: BridgeParams,
    a_norm: np.ndarray,
    no_extra: bool = False,
) -> Tensor:
    """Forecast all n variables from the variables selected by mask.b.

    Returns:
        (n, l') for a WindowSample, (B, n, l') for a WindowBatch.
    """
    return vip_trace(x, mask.b, mask.p, mask.b_hat, mask.p_hat, params, bridge, a_norm, no_extra).output
