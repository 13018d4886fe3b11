"""Training diagnostics, the gradient-collinearity probe and policy evaluation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from .advantage import compute_advantages
from .envs import Env
from .neural import DenseNet, log_softmax
from .ppo import ActorCritic
from .rng import derive_seed, make_rng
from .sampling import RolloutBuffer, sample_action


@dataclass
class MetricsRecord:
    global_step: int
    eval_reward: float
    approx_kl: float
    entropy: float
    explained_variance: float
    value_bias: float
    critic_loss: float
    clip_fraction: float
    grad_collinearity: float | None = None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(v is None or math.isfinite(v) for v in asdict(self).values())


@dataclass
class EvalResult:
    episode_returns: list[float]
    mean_return: float


def explained_variance(predicted: np.ndarray, returns: np.ndarray) -> float:
    """1 - Var(returns - predicted) / Var(returns), or 0 when the returns are constant."""
    predicted = np.asarray(predicted, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    var_y = float(np.var(returns))
    if var_y < 1e-12:
        return 0.0
    return 1.0 - float(np.var(returns - predicted)) / var_y


def value_bias(predicted: np.ndarray, returns: np.ndarray) -> float:
    """Signed mean of predicted - returns; positive means the critic overestimates."""
    return float(np.mean(np.asarray(predicted, dtype=np.float64) - np.asarray(returns, dtype=np.float64)))


def mean_policy_entropy(actor: DenseNet, states: np.ndarray) -> float:
    lp = log_softmax(actor(states))
    return float(np.mean(-np.sum(np.exp(lp) * lp, axis=-1)))


def evaluate(actor_critic: ActorCritic | DenseNet, env_id: str, n_episodes: int = 5, seed: int = 0) -> EvalResult:
    """Play ``n_episodes`` full episodes with actions sampled from the policy.

    Episode reset seeds and the action stream are both derived from ``seed``,
    so the result is a pure function of (policy, env_id, n_episodes, seed).
    Only the actor is read; nothing is modified.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    actor = actor_critic if isinstance(actor_critic, DenseNet) else actor_critic.actor
    env = Env(env_id, derive_seed(seed, "eval-env"))
    rng = make_rng(derive_seed(seed, "eval-actions"))
    returns = []
    for i in range(n_episodes):
        obs = env.reset(derive_seed(seed, "episode", i))
        total = 0.0
        while True:
            a = sample_action(log_softmax(actor(obs)), rng)
            obs, reward, terminated, truncated = env.step(a)
            total += reward
            if terminated or truncated:
                break
        returns.append(total)
    return EvalResult(returns, float(np.mean(returns)))


# ------------------------------------------------------------- collinearity


@dataclass
class CollinearityResult:
    """Mean |cosine| per pair group, plus the signed means for reference.

    Collinearity ignores direction, so the headline numbers use the absolute
    cosine.  On CartPole the signed cosine of neighbours is usually negative,
    because consecutive steps often push in opposite directions from almost
    the same state, which gives anti-parallel gradients.
    """

    consecutive: float
    random: float
    n_pairs: int
    consecutive_signed: float = float("nan")
    random_signed: float = float("nan")

    @property
    def difference(self) -> float:
        return self.consecutive - self.random


def per_sample_policy_gradients(actor: DenseNet, states: np.ndarray, actions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Rows are flattened grad_theta log pi(a_t | s_t) * weight_t."""
    out = np.empty((len(actions), actor.parameter_count))
    for i, (s, a, w) in enumerate(zip(states, actions, weights)):
        logits, cache = actor.forward(s)
        g = -np.exp(log_softmax(logits))
        g[a] += 1.0
        out[i] = np.concatenate([p.ravel() for p in actor.backward(cache, g * w)])
    return out


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def sample_pairs(episode_ends: np.ndarray, rng: np.random.Generator, n_pairs: int) -> tuple[np.ndarray, np.ndarray]:
    """``n_pairs`` neighbour pairs (t, t+1) inside one episode and ``n_pairs`` random pairs with |i - j| > 1."""
    n = len(episode_ends)
    if n < 2:
        raise ValueError("need at least two transitions")
    adjacent = np.flatnonzero(~np.asarray(episode_ends, dtype=bool)[:-1])
    if len(adjacent) == 0:
        raise ValueError("no consecutive pair inside one episode")
    first = adjacent[rng.integers(0, len(adjacent), size=n_pairs)]
    cons_pairs = np.stack([first, first + 1], axis=1)

    rand_pairs = []
    if n >= 3:
        while len(rand_pairs) < n_pairs:
            i, j = (int(v) for v in rng.integers(0, n, size=2))
            if abs(i - j) > 1:
                rand_pairs.append((i, j))
    return cons_pairs, np.array(rand_pairs, dtype=np.int64).reshape(-1, 2)


def grad_collinearity(
    actor_critic: ActorCritic,
    buffer: RolloutBuffer,
    rng: np.random.Generator,
    n_pairs: int = 64,
    advantages: np.ndarray | None = None,
    gamma: float = 0.99,
    gae_lambda: float = 0.98,
    grad_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> CollinearityResult:
    """Cosine similarity of per-transition policy gradients.

    Compares pairs (t, t+1) inside one episode against random pairs at least
    two steps apart.  ``grad_fn`` maps an array of buffer indices to gradient
    rows and replaces the network computation (used to inject synthetic
    gradients).
    """
    cons_pairs, rand_pairs = sample_pairs(buffer.episode_ends, rng, n_pairs)
    needed = np.unique(np.concatenate([cons_pairs.ravel(), rand_pairs.ravel()]))
    if grad_fn is None:
        if advantages is None:
            advantages = compute_advantages(buffer, actor_critic.critic, gamma, gae_lambda).advantages
        rows = per_sample_policy_gradients(actor_critic.actor, buffer.states[needed], buffer.actions[needed], advantages[needed])
    else:
        rows = np.asarray(grad_fn(needed), dtype=np.float64)
    where = {int(k): r for r, k in enumerate(needed)}

    def cosines(pairs: np.ndarray) -> np.ndarray:
        return np.array([_cosine(rows[where[int(i)]], rows[where[int(j)]]) for i, j in pairs])

    def mean(values: np.ndarray) -> float:
        return float(np.mean(values)) if len(values) else float("nan")

    cons, rand = cosines(cons_pairs), cosines(rand_pairs)
    return CollinearityResult(mean(np.abs(cons)), mean(np.abs(rand)), n_pairs, mean(cons), mean(rand))


# ---------------------------------------------------------------- stability


def series_variance(values: Sequence[float], window: int | None = None) -> float:
    """Population variance of a metric series, optionally over its trailing ``window`` entries."""
    arr = np.asarray([v for v in values if v is not None and math.isfinite(v)], dtype=np.float64)
    if window is not None:
        arr = arr[-window:]
    if len(arr) == 0:
        return float("nan")
    return float(np.var(arr))
