"""Rollout collection and transition selection.

Three ways of deciding which transitions reach the optimiser:

* fixed K-step skipping (store every k-th step, fold skipped rewards in),
* random adaptive skipping (gap k or k+1 on the sign of a normal draw),
* uniform index subsampling of a full buffer, done after advantages exist.

The first two rewrite the buffer before advantage estimation; the third never
touches the buffer and only picks indices.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .neural import log_softmax

if TYPE_CHECKING:
    from .envs import Env
    from .ppo import ActorCritic


@dataclass
class Transition:
    """One environment step.

    ``done`` marks a true termination (bootstrap masked); ``truncated`` marks a
    time-limit cut, after which the value of ``next_state`` is still used.
    Either one ends the episode.
    """

    state: np.ndarray
    action: int
    log_prob: float
    reward: float
    next_state: np.ndarray
    done: int
    value: float
    truncated: int = 0

    @property
    def episode_end(self) -> bool:
        return bool(self.done or self.truncated)


@dataclass
class RolloutBuffer:
    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray
    values: np.ndarray
    policy_version: int = 0
    source_steps: int | None = None  # raw env steps behind this buffer, when it was skipped down

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episode_ends(self) -> np.ndarray:
        return (self.dones | self.truncated).astype(bool)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], policy_version: int = 0) -> "RolloutBuffer":
        if not transitions:
            raise ContractViolation("cannot build a buffer from zero transitions")
        return cls(
            states=np.array([t.state for t in transitions], dtype=np.float64),
            actions=np.array([t.action for t in transitions], dtype=np.int64),
            log_probs=np.array([t.log_prob for t in transitions], dtype=np.float64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            next_states=np.array([t.next_state for t in transitions], dtype=np.float64),
            dones=np.array([t.done for t in transitions], dtype=np.int64),
            truncated=np.array([t.truncated for t in transitions], dtype=np.int64),
            values=np.array([t.value for t in transitions], dtype=np.float64),
            policy_version=policy_version,
        )

    def transitions(self) -> list[Transition]:
        return [
            Transition(
                self.states[i], int(self.actions[i]), float(self.log_probs[i]), float(self.rewards[i]),
                self.next_states[i], int(self.dones[i]), float(self.values[i]), int(self.truncated[i]),
            )
            for i in range(len(self))
        ]

    def select(self, indices: np.ndarray) -> "RolloutBuffer":
        """Row subset, in the given order (copies)."""
        idx = np.asarray(indices, dtype=np.int64)
        return RolloutBuffer(
            self.states[idx], self.actions[idx], self.log_probs[idx], self.rewards[idx],
            self.next_states[idx], self.dones[idx], self.truncated[idx], self.values[idx],
            self.policy_version, self.source_steps,
        )


def sample_action(log_probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a categorical distribution."""
    cdf = np.cumsum(np.exp(log_probs))
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(a, len(log_probs) - 1)


def collect_rollout(
    env: "Env",
    actor_critic: "ActorCritic",
    steps: int,
    rng: np.random.Generator,
    greedy: bool = False,
) -> RolloutBuffer:
    """Run the current policy for exactly ``steps`` environment steps.

    The environment is reset automatically whenever an episode ends, so the
    buffer may span several episodes.  An episode in progress is carried over
    to the next call.
    """
    if steps < 1:
        raise ConfigurationError("rollout steps must be >= 1")
    actor, critic = actor_critic.actor, actor_critic.critic
    obs_dim = env.obs_dim
    states = np.empty((steps, obs_dim))
    next_states = np.empty((steps, obs_dim))
    actions = np.empty(steps, dtype=np.int64)
    log_probs = np.empty(steps)
    rewards = np.empty(steps)
    values = np.empty(steps)
    dones = np.zeros(steps, dtype=np.int64)
    truncs = np.zeros(steps, dtype=np.int64)

    obs = env.state.observation if env.state is not None and not env.state.done else env.reset()
    for t in range(steps):
        lp = log_softmax(actor(obs))
        a = int(np.argmax(lp)) if greedy else sample_action(lp, rng)
        states[t] = obs
        actions[t] = a
        log_probs[t] = lp[a]
        values[t] = critic(obs)[0]
        nxt, reward, terminated, truncated = env.step(a)
        rewards[t] = reward
        next_states[t] = nxt
        dones[t] = terminated
        truncs[t] = truncated
        obs = env.reset() if (terminated or truncated) else nxt
    return RolloutBuffer(states, actions, log_probs, rewards, next_states, dones, truncs, values, actor_critic.policy_version)


def dump_buffer_csv(path: str | Path, buffer: RolloutBuffer, advantages: np.ndarray | None = None, returns: np.ndarray | None = None) -> None:
    """Debug dump: one row per transition."""
    obs_dim = buffer.states.shape[1]
    header = ["index", "action", "reward", "done", "truncated", "value", "log_prob"]
    if advantages is not None:
        header += ["advantage", "return"]
    header += [f"obs{i}" for i in range(obs_dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(buffer)):
            row = [i, int(buffer.actions[i]), _f(buffer.rewards[i]), int(buffer.dones[i]), int(buffer.truncated[i]),
                   _f(buffer.values[i]), _f(buffer.log_probs[i])]
            if advantages is not None:
                row += [_f(advantages[i]), _f(returns[i]) if returns is not None else ""]
            row += [_f(v) for v in buffer.states[i]]
            w.writerow(row)


def _f(x: float) -> str:
    return format(float(x), ".17g")


# ------------------------------------------------------------------ skipping


class SkipSampler:
    """Decides which raw transitions are stored and folds skipped rewards into them.

    ``mode`` is ``"fixed"`` (gap always ``base_k``) or ``"random_adaptive"``
    (gap ``base_k`` when a standard-normal draw is positive, else ``base_k + 1``).
    The first step of every episode, and of every stream, is stored.  When an
    episode ends on a skipped step, the pending rewards and the end-of-episode
    flags are moved onto the last stored transition of that episode.
    """

    def __init__(self, base_k: int, mode: str = "fixed", rng: np.random.Generator | None = None):
        if base_k < 1:
            raise ConfigurationError("base_k must be >= 1")
        if mode not in ("fixed", "random_adaptive"):
            raise ConfigurationError(f"unknown skip mode {mode!r}")
        if mode == "random_adaptive" and rng is None:
            raise ConfigurationError("random_adaptive mode needs an rng")
        self.base_k = base_k
        self.mode = mode
        self.rng = rng
        self.pending_reward = 0.0
        self.gaps: list[int] = []
        self._countdown = 0
        self._last: Transition | None = None

    def next_gap(self) -> int:
        if self.mode == "fixed":
            return self.base_k
        eps = float(self.rng.standard_normal())
        return self.base_k if eps > 0 else self.base_k + 1

    def start_segment(self) -> None:
        self._countdown = 0
        self._last = None
        self.pending_reward = 0.0

    def feed(self, t: Transition) -> Transition | None:
        """Offer one raw transition; returns the stored copy or ``None`` if skipped."""
        self.pending_reward += t.reward
        emitted = None
        if self._countdown == 0:
            emitted = replace(t, reward=self.pending_reward)
            self.pending_reward = 0.0
            self._last = emitted
            gap = self.next_gap()
            self.gaps.append(gap)
            self._countdown = gap - 1
        else:
            self._countdown -= 1
        if t.episode_end:
            if emitted is None:
                self._flush(done=t.done, truncated=t.truncated)
            self.start_segment()
        return emitted

    def finish(self) -> None:
        """End of stream: fold any pending reward into the last stored transition."""
        self._flush()
        self.start_segment()

    def _flush(self, done: int = 0, truncated: int = 0) -> None:
        if self._last is not None:
            self._last.reward += self.pending_reward
            if done or truncated:
                self._last.done = int(done)
                self._last.truncated = int(truncated)
        self.pending_reward = 0.0


def _skip(stream: Iterable[Transition], sampler: SkipSampler) -> list[Transition]:
    sampler.start_segment()
    out = []
    for t in stream:
        stored = sampler.feed(t)
        if stored is not None:
            out.append(stored)
    sampler.finish()
    return out


def skip_fixed_k(stream: Iterable[Transition], sampler: SkipSampler) -> list[Transition]:
    if sampler.mode != "fixed":
        raise ConfigurationError("skip_fixed_k needs a fixed-mode sampler")
    return _skip(stream, sampler)


def skip_random_k(stream: Iterable[Transition], sampler: SkipSampler, rng: np.random.Generator | None = None) -> list[Transition]:
    if sampler.mode != "random_adaptive":
        raise ConfigurationError("skip_random_k needs a random_adaptive sampler")
    if rng is not None:
        sampler.rng = rng
    return _skip(stream, sampler)


def skip_buffer(buffer: RolloutBuffer, sampler: SkipSampler) -> RolloutBuffer:
    """Apply a skip sampler to a full rollout and return the shorter buffer."""
    stored = _skip(buffer.transitions(), sampler)
    out = RolloutBuffer.from_transitions(stored, buffer.policy_version)
    out.source_steps = len(buffer)
    return out


# --------------------------------------------------------------- subsampling


def subsample_size(total: int, fraction: float) -> int:
    # tolerate representation error such as 0.29 * 100 = 28.999999999999996
    return int(math.floor(fraction * total + 1e-9))


def subsample_indices(total: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``floor(fraction * total)`` distinct indices from ``range(total)``, uniformly.

    Partial Fisher-Yates: only the first ``n`` positions of the permutation are
    materialised.  ``fraction == 1`` returns ``arange(total)`` without using
    the generator.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"subsample_p must lie in (0, 1], got {fraction}")
    if total < 1:
        raise ConfigurationError("cannot subsample an empty buffer")
    if fraction == 1.0:
        return np.arange(total)
    n = subsample_size(total, fraction)
    pool = np.arange(total)
    offsets = rng.random(n)
    for i in range(n):
        j = i + min(int(offsets[i] * (total - i)), total - i - 1)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:n].copy()
