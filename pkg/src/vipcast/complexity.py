"""Parameter and multiply-accumulate counts of the base and pruned models.

The closed-form counts below match the live entries of a deployed model
exactly (see measured_param_count): a pruned model keeps only the retained
columns of W_Q and W_K, keeps b_hat only for the selected variables, and adds
the bridge projection (or, in the no_extra ablation, the extra MLP with
only the selected rows of its input weights).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .config import ModelDims
from .model import ModelParams
from .pruning import MaskState
from .vip import BridgeParams


def _shared_params(dims: ModelDims, n: int) -> int:
    q, f = dims.q, dims.ffn_dim
    embeddings = dims.steps_per_day * dims.d_tod + dims.days_per_week * dims.d_dow + n * dims.d_v
    input_mlp = 2 * dims.d
    per_layer_rest = q * q + 2 * q * f + f + q + 4 * q  # W_V, FFN, LayerNorms
    output = dims.l * q * dims.l_out + dims.l_out
    return embeddings + input_mlp + dims.num_layers * per_layer_rest + output


def stmf_param_count(dims: ModelDims, n: int) -> int:
    """Trainable entries of the unpruned forecaster."""
    return _shared_params(dims, n) + dims.num_layers * 2 * dims.q * dims.q


def _extra_map_params(dims: ModelDims, n: int, m: int) -> int:
    return m * dims.q * dims.d_v + dims.d_v + dims.d_v * n * dims.q + n * dims.q


def vip_param_count(dims: ModelDims, n: int, m: int, q_prime: int, no_extra: bool = False) -> int:
    """Live entries of a model pruned to m variables and q' attention dims."""
    qk = dims.num_layers * 2 * dims.q * q_prime
    importance = m + dims.q  # b_hat[b] and the p_hat gate
    bridge = _extra_map_params(dims, n, m) if no_extra else dims.d_v * dims.d_v + dims.d_v
    return _shared_params(dims, n) + qk + importance + bridge


def _attention_macs(s: int, t: int, q: int, q_prime: int, f: int) -> int:
    projections = s * t * q * (2 * q_prime + q)
    scores = s * t * t * q_prime
    mixing = s * t * t * q
    ffn = 2 * s * t * q * f
    return projections + scores + mixing + ffn


def stmf_flops(dims: ModelDims, n: int) -> int:
    """Multiply-accumulates of one forward pass over one window."""
    return vip_flops(dims, n, n, dims.q, extrapolate=False)


def vip_flops(
    dims: ModelDims,
    n: int,
    m: int,
    q_prime: int,
    extrapolate: bool = True,
    extra_map: bool = False,
) -> int:
    """Multiply-accumulates of one masked forward pass over one window.

    extra_map counts the no_extra ablation MLP in place of the bridge.
    """
    q, l, f = dims.q, dims.l, dims.ffn_dim
    total = l * m * dims.d
    total += dims.temporal_layers * _attention_macs(m, l, q, q_prime, f)
    total += dims.spatial_layers * _attention_macs(l, m, q, q_prime, f)
    if extrapolate:
        total += n * dims.d_v * dims.d_v + m * n * dims.d_v + m * n * l * q
    elif extra_map:
        total += l * (m * q * dims.d_v + dims.d_v * n * q)
    total += n * l * q * dims.l_out
    return total


def measured_param_count(
    params: ModelParams,
    bridge: Optional[BridgeParams] = None,
    mask: Optional[MaskState] = None,
    no_extra: bool = False,
) -> int:
    """Count the entries a deployed model actually uses.

    Without a mask this is the size of every base-model tensor.
    """
    if mask is None:
        return int(sum(t.size for t in params.parameters()))
    q_prime = int(np.count_nonzero(mask.p))
    m = int(np.count_nonzero(mask.b))
    total = 0
    for name, t in params.named_tensors().items():
        if name.endswith(".w_q") or name.endswith(".w_k"):
            total += t.shape[0] * q_prime
        else:
            total += t.size
    total += m + mask.p_hat.size
    if bridge is not None:
        if no_extra:
            total += m * bridge.extra_w1.shape[1] * bridge.extra_w1.shape[2]
            total += bridge.extra_b1.size + bridge.extra_w2.size + bridge.extra_b2.size
        else:
            total += bridge.fc_w.size + bridge.fc_b.size
    return total
