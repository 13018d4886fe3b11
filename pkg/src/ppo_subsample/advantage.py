"""TD residuals, GAE and advantage normalisation over a complete buffer.

Advantages are always computed on the whole rollout.  Any subsampling of
transitions for the gradient step happens afterwards and only picks indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .neural import DenseNet
from .sampling import RolloutBuffer

NORM_EPS = 1e-8


@dataclass
class AdvantageBatch:
    deltas: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    normalized: bool = False
    norm_mean: float = 0.0
    norm_std: float = 1.0

    def __len__(self) -> int:
        return len(self.advantages)

    def select(self, indices: np.ndarray) -> "AdvantageBatch":
        idx = np.asarray(indices, dtype=np.int64)
        return AdvantageBatch(self.deltas[idx], self.advantages[idx], self.returns[idx], self.normalized, self.norm_mean, self.norm_std)


def td_residuals(buffer: RolloutBuffer, critic: DenseNet, gamma: float, next_values: np.ndarray | None = None) -> np.ndarray:
    """delta_t = r_t + gamma * (1 - done_t) * V(s_{t+1}) - V(s_t).

    ``V(s_t)`` is the value recorded at collection time.  Only true
    terminations mask the bootstrap; a time-limit truncation still uses
    ``V(next_state)``.
    """
    if not 0.0 < gamma <= 1.0:
        raise ConfigurationError(f"gamma must lie in (0, 1], got {gamma}")
    if next_values is None:
        next_values = critic(buffer.next_states)[:, 0]
    return buffer.rewards + gamma * (1.0 - buffer.dones) * next_values - buffer.values


def gae(
    deltas: np.ndarray,
    gamma: float,
    lam: float,
    episode_ends: np.ndarray,
    values: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Backward recursion A_t = delta_t + gamma * lam * (1 - end_t) * A_{t+1}.

    ``episode_ends`` flags the last step of each episode (terminated or
    truncated); the carry is zeroed there so no advantage leaks across an
    episode boundary.  Returns ``(advantages, returns)``; ``returns`` is
    ``advantages + values`` when ``values`` is given, else ``None``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"gae_lambda must lie in [0, 1], got {lam}")
    n = len(deltas)
    adv = np.empty(n)
    carry = 0.0
    decay = gamma * lam
    ends = np.asarray(episode_ends, dtype=bool)
    for t in range(n - 1, -1, -1):
        if ends[t]:
            carry = 0.0
        carry = deltas[t] + decay * carry
        adv[t] = carry
    returns = adv + values if values is not None else None
    return adv, returns


def normalize_advantages(advantages: np.ndarray, eps: float = NORM_EPS) -> tuple[np.ndarray, tuple[float, float]]:
    """(A - mean) / (std + eps) with the population standard deviation."""
    if len(advantages) < 2:
        raise ConfigurationError("need at least two advantages to normalise")
    mean = float(np.mean(advantages))
    std = float(np.std(advantages))
    return (advantages - mean) / (std + eps), (mean, std)


def compute_advantages(buffer: RolloutBuffer, critic: DenseNet, gamma: float, lam: float, normalize: bool = True) -> AdvantageBatch:
    deltas = td_residuals(buffer, critic, gamma)
    adv, returns = gae(deltas, gamma, lam, buffer.episode_ends, buffer.values)
    batch = AdvantageBatch(deltas, adv, returns)
    if normalize:
        batch.advantages, (batch.norm_mean, batch.norm_std) = normalize_advantages(adv)
        batch.normalized = True
    return batch
