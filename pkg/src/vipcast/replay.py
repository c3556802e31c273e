"""Prioritized replay of past windows together with the importance vectors
that were live when they were stored.

Sampling probability is P^alpha / sum(P^alpha). Priorities are fixed at
storage time:

    pvr     1 / max(loss, 1e-8)   (low-loss samples are replayed more)
    in-pvr  max(loss, 1e-8)
    rand-er 1
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .config import REPLAY_POLICIES
from .errors import ConfigError, ContractError, NumericError

PRIORITY_EPS = 1e-8


def priority(loss: float, policy: str = "pvr") -> float:
    """Storage priority of a sample with main loss `loss`.

    Raises:
        ConfigError: On an unknown policy.
        NumericError: If the loss is not finite.
    """
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}", stage="replay")
    clamped = max(float(loss), PRIORITY_EPS)
    if policy == "pvr":
        return 1.0 / clamped
    if policy == "in-pvr":
        return clamped
    if policy == "rand-er":
        return 1.0
    raise ConfigError(f"unknown replay policy {policy!r}")


@dataclass(frozen=True)
class ReplaySample:
    """A stored window with snapshots of b_hat / p_hat.

    All arrays are private copies; later training never mutates them.
    """

    x_in: np.ndarray
    x_out: np.ndarray
    tod: np.ndarray
    dow: np.ndarray
    b_hat_snapshot: np.ndarray
    p_hat_snapshot: np.ndarray
    priority: float

    @classmethod
    def capture(
        cls,
        x_in: np.ndarray,
        x_out: np.ndarray,
        tod: np.ndarray,
        dow: np.ndarray,
        b_hat: np.ndarray,
        p_hat: np.ndarray,
        loss: float,
        policy: str = "pvr",
    ) -> "ReplaySample":
        return cls(
            np.array(x_in, dtype=np.float64),
            np.array(x_out, dtype=np.float64),
            np.array(tod),
            np.array(dow),
            np.array(b_hat, dtype=np.float64),
            np.array(p_hat, dtype=np.float64),
            priority(loss, policy),
        )


class ReplayBuffer:
    """Capacity-bounded buffer with probability-proportional sampling.

    When full, push() evicts the sample most recently returned by
    sample_for_replay() if it is still stored; otherwise it draws a victim
    with the sampling distribution.
    """

    def __init__(self, capacity: int, policy: str = "pvr", alpha: float = 0.6, seed: int = 0):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        if policy not in REPLAY_POLICIES:
            raise ConfigError(f"replay_policy must be one of {REPLAY_POLICIES}, got {policy!r}")
        if alpha < 0:
            raise ConfigError("alpha must be >= 0")
        self.capacity = capacity
        self.policy = policy
        self.alpha = alpha
        self.samples: List[ReplaySample] = []
        self._rng = np.random.default_rng(seed)
        self._last_replayed: Optional[ReplaySample] = None

    def __len__(self) -> int:
        return len(self.samples)

    def probabilities(self) -> np.ndarray:
        """P^alpha / sum(P^alpha) over the stored samples."""
        if not self.samples:
            raise ContractError("empty replay buffer")
        weights = np.array([s.priority for s in self.samples]) ** self.alpha
        return weights / weights.sum()

    def _draw(self, rng: Optional[np.random.Generator]) -> int:
        rng = rng if rng is not None else self._rng
        return int(rng.choice(len(self.samples), p=self.probabilities()))

    def sample_for_replay(self, rng: Optional[np.random.Generator] = None) -> Optional[ReplaySample]:
        """Draw one sample, or None when the buffer is empty."""
        if not self.samples:
            return None
        chosen = self.samples[self._draw(rng)]
        self._last_replayed = chosen
        return chosen

    def push(self, sample: ReplaySample, rng: Optional[np.random.Generator] = None) -> Optional[ReplaySample]:
        """Insert a sample; returns the evicted sample, if any."""
        evicted = None
        if len(self.samples) >= self.capacity:
            index = next((i for i, s in enumerate(self.samples) if s is self._last_replayed), None)
            if index is None:
                index = self._draw(rng)
            evicted = self.samples.pop(index)
            self._last_replayed = None
        self.samples.append(sample)
        return evicted

    def clear(self) -> None:
        self.samples.clear()
        self._last_replayed = None
