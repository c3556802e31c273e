"""Variable and parameter masks driven by learnable importance vectors.

Masks shrink geometrically: after iteration k, max(floor(size * (1 - rate)^k), 1)
entries survive, until the budget (m variables, q' parameter dims) is met.
Selection is rank-based over the survivors of the previous iteration, so the
retained count is exact even with tied importance values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BudgetError, ConfigError, ContractError
from .tensor import Tensor

_FLOOR_TOL = 1e-9


@dataclass
class MaskState:
    """Binary masks plus the importance vectors that drive them.

    Attributes:
        b: (n,) 0/1 variable mask.
        p: (q,) 0/1 parameter mask over attention dimensions.
        b_hat: (n,) trainable variable importance.
        p_hat: (q,) trainable parameter importance.
        pinned: Variables that are never pruned.
    """

    b: np.ndarray
    p: np.ndarray
    b_hat: Tensor
    p_hat: Tensor
    pinned: Tuple[int, ...] = ()

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.b)

    @property
    def columns(self) -> np.ndarray:
        return np.flatnonzero(self.p)

    def validate(self) -> "MaskState":
        if self.b.sum() < 1 or self.p.sum() < 1:
            raise ContractError("masks must keep at least one entry")
        if any(self.b[i] == 0 for i in self.pinned):
            raise ContractError("pinned variables must be selected")
        return self

    def copy(self) -> "MaskState":
        """Detached copy (importance vectors do not share storage)."""
        return MaskState(
            self.b.copy(),
            self.p.copy(),
            Tensor(self.b_hat.data.copy(), requires_grad=True, name="b_hat"),
            Tensor(self.p_hat.data.copy(), requires_grad=True, name="p_hat"),
            tuple(self.pinned),
        )


def init_b_hat(a_norm: np.ndarray) -> np.ndarray:
    """Row sums of the normalized adjacency."""
    return np.asarray(a_norm, dtype=np.float64).sum(axis=1)


def init_p_hat(q: int, seed: int) -> np.ndarray:
    """q standard-normal draws."""
    if q < 1:
        raise ContractError("q must be >= 1")
    return np.random.default_rng(seed).standard_normal(q)


def init_mask_state(a_norm: np.ndarray, q: int, seed: int, pinned: Sequence[int] = ()) -> MaskState:
    """All-ones masks with b_hat from the graph and p_hat from N(0, 1)."""
    n = a_norm.shape[0]
    return MaskState(
        b=np.ones(n, dtype=np.int8),
        p=np.ones(q, dtype=np.int8),
        b_hat=Tensor(init_b_hat(a_norm), requires_grad=True, name="b_hat"),
        p_hat=Tensor(init_p_hat(q, seed), requires_grad=True, name="p_hat"),
        pinned=tuple(int(i) for i in pinned),
    ).validate()


def retained_count(size: int, rate: float, k: int) -> int:
    """max(floor(size * (1 - rate)^k), 1)."""
    if k < 0:
        raise ContractError("k must be >= 0")
    return max(math.floor(size * (1.0 - rate) ** k + _FLOOR_TOL), 1)


def iterations_to_target(n: int, rate: float, m: int) -> int:
    """Smallest k with retained_count(n, rate, k) <= m."""
    if not 1 <= m <= n:
        raise ContractError(f"m must be in [1, {n}], got {m}")
    if not 0.0 < rate < 1.0:
        raise ContractError(f"rate must be in (0, 1), got {rate}")
    k = 0
    while retained_count(n, rate, k) > m:
        k += 1
    return k


def compute_mask(
    importance: np.ndarray,
    prev_mask: np.ndarray,
    rate: Optional[float] = None,
    pinned: Iterable[int] = (),
    keep: Optional[int] = None,
) -> np.ndarray:
    """Keep the `keep` survivors of prev_mask with the largest |importance|.

    Pinned entries are always kept and count toward `keep`. Among equal
    magnitudes the lowest indices are pruned first.

    Args:
        importance: Importance values (sign ignored).
        prev_mask: Previous 0/1 mask; the result is a subset of it.
        rate: Pruning rate used when keep is None:
            keep = max(floor(|prev| * (1 - rate)), 1).
        pinned: Indices that must be kept (all set in prev_mask).
        keep: Explicit number of entries to keep (clamped to |prev|).

    Returns:
        0/1 int8 mask.

    Raises:
        BudgetError: If more entries are pinned than kept.
        ContractError: If prev_mask is empty, a pinned index is not in
            prev_mask, or neither rate nor keep is given.
    """
    magnitude = np.abs(np.asarray(importance, dtype=np.float64))
    prev = np.asarray(prev_mask) != 0
    if magnitude.shape != prev.shape:
        raise ContractError(f"importance shape {magnitude.shape} != mask shape {prev.shape}")
    survivors = np.flatnonzero(prev)
    if survivors.size == 0:
        raise ContractError("previous mask is empty")
    if keep is None:
        if rate is None:
            raise ContractError("compute_mask needs a rate or a keep count")
        keep = max(math.floor(survivors.size * (1.0 - rate) + _FLOOR_TOL), 1)
    keep = min(max(int(keep), 1), survivors.size)

    pinned_idx = np.unique(np.asarray(list(pinned), dtype=np.intp))
    if pinned_idx.size and not np.all(prev[pinned_idx]):
        raise ContractError("pinned indices must be set in the previous mask")
    if pinned_idx.size > keep:
        raise BudgetError(f"{pinned_idx.size} pinned entries exceed the retained count {keep}")

    out = np.zeros(prev.shape, dtype=np.int8)
    out[pinned_idx] = 1
    free = np.setdiff1d(survivors, pinned_idx)
    n_free = keep - pinned_idx.size
    if n_free > 0:
        order = np.lexsort((free, magnitude[free]))
        out[free[order[free.size - n_free :]]] = 1
    return out


def random_reg_mask(size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """0/1 mask with exactly `count` ones at uniformly random positions."""
    if not 0 <= count <= size:
        raise ContractError(f"count must be in [0, {size}], got {count}")
    mask = np.zeros(size, dtype=np.int8)
    mask[rng.choice(size, size=count, replace=False)] = 1
    return mask


@dataclass
class PruneSchedule:
    """Per-iteration retention counts for variables and parameter dims.

    Attributes:
        n: Variable count.
        q: Attention width.
        r_b: Variable pruning rate.
        r_p: Parameter pruning rate.
        target_m: Variable budget.
        target_q_prime: Parameter budget.
    """

    n: int
    q: int
    r_b: float
    r_p: float
    target_m: int
    target_q_prime: int
    _iterations: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if not 1 <= self.target_m < self.n:
            raise ConfigError(f"target_m must be in [1, {self.n}), got {self.target_m}")
        if not 1 <= self.target_q_prime <= self.q:
            raise ConfigError(f"target_q_prime must be in [1, {self.q}], got {self.target_q_prime}")
        self._iterations = iterations_to_target(self.n, self.r_b, self.target_m)

    @property
    def iterations(self) -> int:
        """Number of pruning iterations K; iteration K meets the variable budget."""
        return self._iterations

    def variable_keep(self, k: int) -> int:
        return max(retained_count(self.n, self.r_b, k), self.target_m)

    def param_keep(self, k: int) -> int:
        if k >= self._iterations:
            return self.target_q_prime
        return max(retained_count(self.q, self.r_p, k), self.target_q_prime)

    def counts(self) -> List[Tuple[int, int, int]]:
        """(k, variables kept, parameter dims kept) for k = 1..K."""
        return [(k, self.variable_keep(k), self.param_keep(k)) for k in range(1, self._iterations + 1)]
