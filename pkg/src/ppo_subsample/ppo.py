"""Clipped-surrogate PPO update over a (possibly subsampled) index set."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .advantage import AdvantageBatch
from .errors import ConfigurationError, ContractViolation, OnPolicyViolation, TrainingDivergence
from .neural import (
    DenseNet,
    OptimizerState,
    apply_update,
    categorical_entropy,
    clip_grad_norm,
    global_norm,
    log_softmax,
)
from .sampling import RolloutBuffer, subsample_indices

METHODS = ("vanilla", "fixed_k", "random_k", "subsample")


@dataclass
class PpoConfig:
    """Defaults are the CartPole "Pure PPO" column of the reference hyperparameter table."""

    method: str = "vanilla"
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.98
    subsample_p: float = 1.0
    base_k: int = 2
    rollout_steps: int = 1400
    epochs_per_update: int = 1
    minibatch_size: int | None = 64
    actor_lr: float = 3e-4
    critic_lr: float = 5e-4
    entropy_coeff: float = 0.01
    max_grad_norm_actor: float | None = None
    max_grad_norm_critic: float | None = None
    max_training_steps: int = 500_000
    seed: int = 0
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    hidden_sizes: tuple[int, ...] = (128, 128)

    def __post_init__(self) -> None:
        def bad(key: str, why: str) -> ConfigurationError:
            return ConfigurationError(f"{key}: {why} (got {getattr(self, key)!r})")

        if self.method not in METHODS:
            raise bad("method", f"must be one of {', '.join(METHODS)}")
        if not self.clip_epsilon > 0:
            raise bad("clip_epsilon", "must be > 0")
        if not 0 < self.gamma <= 1:
            raise bad("gamma", "must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise bad("gae_lambda", "must lie in [0, 1]")
        if not 0 < self.subsample_p <= 1:
            raise bad("subsample_p", "must lie in (0, 1]")
        if self.method != "subsample" and self.subsample_p != 1.0:
            raise bad("subsample_p", f"must be 1 for method {self.method}")
        if self.base_k < 1:
            raise bad("base_k", "must be >= 1")
        if self.rollout_steps < 2:
            raise bad("rollout_steps", "must be >= 2")
        if self.epochs_per_update < 1:
            raise bad("epochs_per_update", "must be >= 1")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise bad("minibatch_size", "must be >= 1 (or unset for full batch)")
        for key in ("actor_lr", "critic_lr"):
            if not getattr(self, key) > 0:
                raise bad(key, "must be > 0")
        if self.entropy_coeff < 0:
            raise bad("entropy_coeff", "must be >= 0")
        for key in ("max_grad_norm_actor", "max_grad_norm_critic"):
            value = getattr(self, key)
            if value is not None and not value > 0:
                raise bad(key, "must be > 0 when set")
        if self.max_training_steps < 1:
            raise bad("max_training_steps", "must be >= 1")
        if self.optimizer not in ("adam", "adamw"):
            raise bad("optimizer", "must be adam or adamw")
        if self.weight_decay < 0:
            raise bad("weight_decay", "must be >= 0")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise bad("hidden_sizes", "must be a non-empty list of positive sizes")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class ActorCritic:
    actor: DenseNet
    critic: DenseNet
    actor_opt: OptimizerState
    critic_opt: OptimizerState
    policy_version: int = 0

    @classmethod
    def build(cls, obs_dim: int, n_actions: int, config: PpoConfig, rng: np.random.Generator) -> "ActorCritic":
        hidden = list(config.hidden_sizes)
        actor = DenseNet.build([obs_dim, *hidden, n_actions], rng, output_gain=0.01)
        critic = DenseNet.build([obs_dim, *hidden, 1], rng, output_gain=1.0)
        return cls(
            actor,
            critic,
            OptimizerState.for_net(actor, config.optimizer, config.actor_lr, config.weight_decay),
            OptimizerState.for_net(critic, config.optimizer, config.critic_lr, config.weight_decay),
        )

    def snapshot(self) -> "ActorCritic":
        return ActorCritic(self.actor.copy(), self.critic.copy(), self.actor_opt.copy(), self.critic_opt.copy(), self.policy_version)


@dataclass
class UpdateReport:
    clip_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    grad_norm_actor: float
    grad_norm_critic: float
    indices: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))
    minibatches: int = 0


# --------------------------------------------------------------------- losses


def probability_ratio(new_log_prob, old_log_prob):
    """exp(new - old); works on scalars and arrays."""
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(np.asarray(new_log_prob, dtype=np.float64) - np.asarray(old_log_prob, dtype=np.float64))
    if not np.all(np.isfinite(ratio)):
        raise TrainingDivergence("non-finite probability ratio")
    return float(ratio) if ratio.ndim == 0 else ratio


def clipped_surrogate(ratios: np.ndarray, advantages: np.ndarray, clip_epsilon: float) -> float:
    """Mean of min(r * A, clip(r, 1 - eps, 1 + eps) * A); an objective to maximise."""
    ratios = np.asarray(ratios, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    clipped = np.clip(ratios, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return float(np.mean(np.minimum(ratios * advantages, clipped * advantages)))


def value_loss(values: np.ndarray, returns: np.ndarray) -> float:
    diff = np.asarray(values, dtype=np.float64) - np.asarray(returns, dtype=np.float64)
    return float(np.mean(diff * diff))


@dataclass
class PolicyStep:
    objective: float
    surrogate: float
    entropy: float
    ratios: np.ndarray
    new_log_probs: np.ndarray
    grads: list[np.ndarray]


def policy_objective(
    actor: DenseNet,
    states: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    clip_epsilon: float,
    entropy_coeff: float,
) -> PolicyStep:
    """Clipped surrogate plus entropy bonus, with its exact gradient w.r.t. the actor."""
    logits, cache = actor.forward(states)
    lp_all = log_softmax(logits)
    n = len(actions)
    rows = np.arange(n)
    lp = lp_all[rows, actions]
    ratios = probability_ratio(lp, old_log_probs)
    ratios = np.atleast_1d(ratios)
    unclipped = ratios * advantages
    clipped = np.clip(ratios, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    surr = np.minimum(unclipped, clipped)
    ent = categorical_entropy(lp_all)
    surrogate = float(np.mean(surr))
    mean_entropy = float(np.mean(ent))
    objective = surrogate + entropy_coeff * mean_entropy
    if not math.isfinite(objective):
        raise TrainingDivergence("non-finite policy objective")

    # d surr / d log pi(a|s) is r * A on the unclipped branch and 0 where clipping is active
    d_lp = np.where(unclipped <= clipped, unclipped, 0.0) / n
    probs = np.exp(lp_all)
    g_logits = -probs * d_lp[:, None]
    g_logits[rows, actions] += d_lp
    # d H / d z_j = -p_j (log p_j + H)
    g_logits -= (entropy_coeff / n) * probs * (lp_all + ent[:, None])
    grads = actor.backward(cache, g_logits)
    return PolicyStep(objective, surrogate, mean_entropy, ratios, lp, grads)


def value_objective(critic: DenseNet, states: np.ndarray, returns: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean squared error against the returns, with its gradient w.r.t. the critic."""
    out, cache = critic.forward(states)
    values = out[:, 0]
    diff = values - returns
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise TrainingDivergence("non-finite value loss")
    grads = critic.backward(cache, (2.0 / len(diff)) * diff[:, None])
    return loss, grads


# --------------------------------------------------------------------- update


def ppo_update(
    actor_critic: ActorCritic,
    buffer: RolloutBuffer,
    advantages: AdvantageBatch,
    config: PpoConfig,
    rng: np.random.Generator,
) -> UpdateReport:
    """One policy iteration on a freshly collected buffer.

    Draws the index set (all of it unless ``subsample_p < 1``), then for each
    epoch shuffles it into minibatches and takes one ascent step on the actor
    and one descent step on the critic per minibatch.  Bumps
    ``policy_version`` so the same buffer cannot be used again.
    """
    if buffer.policy_version != actor_critic.policy_version:
        raise OnPolicyViolation(
            f"buffer was collected by policy version {buffer.policy_version}, current is {actor_critic.policy_version}"
        )
    if len(advantages) != len(buffer):
        raise ContractViolation("advantage batch is not aligned with the buffer")
    actor, critic = actor_critic.actor, actor_critic.critic
    index_set = subsample_indices(len(buffer), config.subsample_p, rng)
    mb = config.minibatch_size or len(index_set)

    sums = dict(surr=0.0, vloss=0.0, ent=0.0, clipped=0.0, gna=0.0, gnc=0.0)
    count = 0
    for _ in range(config.epochs_per_update):
        order = index_set[rng.permutation(len(index_set))]
        for start in range(0, len(order), mb):
            m = order[start : start + mb]
            step = policy_objective(
                actor, buffer.states[m], buffer.actions[m], buffer.log_probs[m],
                advantages.advantages[m], config.clip_epsilon, config.entropy_coeff,
            )
            grads = step.grads
            if config.max_grad_norm_actor is not None:
                grads, gna = clip_grad_norm(grads, config.max_grad_norm_actor)
            else:
                gna = _checked_norm(grads)
            apply_update(actor, actor_critic.actor_opt, grads, maximize=True)

            vloss, vgrads = value_objective(critic, buffer.states[m], advantages.returns[m])
            if config.max_grad_norm_critic is not None:
                vgrads, gnc = clip_grad_norm(vgrads, config.max_grad_norm_critic)
            else:
                gnc = _checked_norm(vgrads)
            apply_update(critic, actor_critic.critic_opt, vgrads, maximize=False)

            sums["surr"] += step.surrogate
            sums["vloss"] += vloss
            sums["ent"] += step.entropy
            sums["clipped"] += float(np.mean(np.abs(step.ratios - 1.0) > config.clip_epsilon))
            sums["gna"] += gna
            sums["gnc"] += gnc
            count += 1

    approx_kl = kl_estimate(actor, buffer, index_set)
    if not math.isfinite(approx_kl):
        raise TrainingDivergence("non-finite KL estimate")
    actor_critic.policy_version += 1
    return UpdateReport(
        clip_loss=sums["surr"] / count,
        value_loss=sums["vloss"] / count,
        entropy=sums["ent"] / count,
        approx_kl=approx_kl,
        clip_fraction=sums["clipped"] / count,
        grad_norm_actor=sums["gna"] / count,
        grad_norm_critic=sums["gnc"] / count,
        indices=index_set,
        minibatches=count,
    )


def kl_estimate(actor: DenseNet, buffer: RolloutBuffer, indices: np.ndarray) -> float:
    """Mean of (r - 1) - log r over ``indices``, with r = pi_new / pi_old.

    Same expectation as mean(old - new) under the collecting policy, but every
    term is non-negative, so the estimate never dips below zero.
    """
    new_lp = log_softmax(actor(buffer.states[indices]))[np.arange(len(indices)), buffer.actions[indices]]
    log_ratio = new_lp - buffer.log_probs[indices]
    return float(np.mean(np.expm1(log_ratio) - log_ratio))


def _checked_norm(grads: list[np.ndarray]) -> float:
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise TrainingDivergence("non-finite gradient")
    return norm
