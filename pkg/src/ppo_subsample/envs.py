"""CartPole-v1 and Acrobot-v1 dynamics.

Both environments follow the Gymnasium classic-control reference: same
constants, same integrators (explicit Euler for CartPole, a single RK4 step
of 0.2 s with the "book" equations for Acrobot), same termination rules and
a 500-step time limit.  All arithmetic is in Python floats (IEEE double).

The step functions are pure: they take an :class:`EnvState` and return a new
one.  :class:`Env` wraps them into the usual stateful reset/step object with
its own stream of episode seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .rng import make_rng, next_seed

MAX_EPISODE_STEPS = 500

# CartPole constants
GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_POLE_LENGTH = 0.5
POLE_MASS_LENGTH = MASS_POLE * HALF_POLE_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_THRESHOLD = 12 * 2 * math.pi / 360
X_THRESHOLD = 2.4

# Acrobot constants
ACROBOT_DT = 0.2
LINK_LENGTH_1 = 1.0
LINK_MASS_1 = 1.0
LINK_MASS_2 = 1.0
LINK_COM_POS_1 = 0.5
LINK_COM_POS_2 = 0.5
LINK_MOI = 1.0
MAX_VEL_1 = 4 * math.pi
MAX_VEL_2 = 9 * math.pi
AVAIL_TORQUE = (-1.0, 0.0, 1.0)


@dataclass(frozen=True)
class EnvState:
    """Snapshot of one environment.

    ``physics`` is the raw integrator state: ``(x, x_dot, theta, theta_dot)``
    for CartPole, ``(theta1, theta2, dtheta1, dtheta2)`` for Acrobot.  The
    observation is derived from it.
    """

    env_id: str
    physics: tuple[float, ...]
    step_count: int = 0
    terminated: bool = False
    truncated: bool = False

    @property
    def observation(self) -> np.ndarray:
        return _OBSERVERS[self.env_id](self.physics)

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    done: bool


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    obs_dim: int
    n_actions: int
    init_low: float
    init_high: float


ENV_SPECS = {
    "cartpole": EnvSpec("cartpole", 4, 2, -0.05, 0.05),
    "acrobot": EnvSpec("acrobot", 6, 3, -0.1, 0.1),
}

_ALIASES = {"cartpole-v1": "cartpole", "acrobot-v1": "acrobot"}


def canonical_env_id(env_id: str) -> str:
    key = env_id.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in ENV_SPECS:
        raise ConfigurationError(f"unknown env_id {env_id!r}; expected one of {sorted(ENV_SPECS)}")
    return key


def env_spec(env_id: str) -> EnvSpec:
    return ENV_SPECS[canonical_env_id(env_id)]


def reset(env_id: str, seed: int) -> EnvState:
    spec = env_spec(env_id)
    rng = make_rng(seed)
    physics = rng.uniform(spec.init_low, spec.init_high, size=4)
    return EnvState(spec.env_id, tuple(float(v) for v in physics))


def _check_step(state: EnvState, action: int, env_id: str, n_actions: int) -> None:
    if state.env_id != env_id:
        raise ContractViolation(f"state belongs to {state.env_id!r}, not {env_id!r}")
    if state.done or _TERMINAL[env_id](state.physics):
        raise ContractViolation("step called on a finished episode; reset first")
    if action not in range(n_actions):
        raise ContractViolation(f"action {action!r} outside 0..{n_actions - 1}")


# ---------------------------------------------------------------- CartPole


def cartpole_terminal(physics: tuple[float, ...]) -> bool:
    x, theta = physics[0], physics[2]
    return x < -X_THRESHOLD or x > X_THRESHOLD or theta < -THETA_THRESHOLD or theta > THETA_THRESHOLD


def _cartpole_obs(physics: tuple[float, ...]) -> np.ndarray:
    return np.array(physics, dtype=np.float64)


def step_cartpole(state: EnvState, action: int) -> StepOutcome:
    _check_step(state, action, "cartpole", 2)
    x, x_dot, theta, theta_dot = state.physics
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    costheta = math.cos(theta)
    sintheta = math.sin(theta)

    temp = (force + POLE_MASS_LENGTH * theta_dot**2 * sintheta) / TOTAL_MASS
    thetaacc = (GRAVITY * sintheta - costheta * temp) / (
        HALF_POLE_LENGTH * (4.0 / 3.0 - MASS_POLE * costheta**2 / TOTAL_MASS)
    )
    xacc = temp - POLE_MASS_LENGTH * thetaacc * costheta / TOTAL_MASS

    # explicit Euler, the reference default
    x = x + TAU * x_dot
    x_dot = x_dot + TAU * xacc
    theta = theta + TAU * theta_dot
    theta_dot = theta_dot + TAU * thetaacc

    terminated = cartpole_terminal((x, x_dot, theta, theta_dot))
    steps = state.step_count + 1
    truncated = not terminated and steps >= MAX_EPISODE_STEPS
    nxt = EnvState("cartpole", (x, x_dot, theta, theta_dot), steps, terminated, truncated)
    return StepOutcome(nxt, 1.0, terminated or truncated)


# ----------------------------------------------------------------- Acrobot


def _acrobot_obs(physics: tuple[float, ...]) -> np.ndarray:
    t1, t2, d1, d2 = physics
    return np.array([math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), d1, d2], dtype=np.float64)


def _acrobot_dsdt(s: tuple[float, float, float, float], torque: float) -> tuple[float, float, float, float]:
    m1, m2 = LINK_MASS_1, LINK_MASS_2
    l1 = LINK_LENGTH_1
    lc1, lc2 = LINK_COM_POS_1, LINK_COM_POS_2
    i1 = i2 = LINK_MOI
    g = 9.8
    theta1, theta2, dtheta1, dtheta2 = s
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(theta2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(theta2)) + i2
    phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2.0)
    phi1 = (
        -m2 * l1 * lc2 * dtheta2**2 * math.sin(theta2)
        - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
        + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
        + phi2
    )
    ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * math.sin(theta2) - phi2) / (
        m2 * lc2**2 + i2 - d2**2 / d1
    )
    ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
    return dtheta1, dtheta2, ddtheta1, ddtheta2


def rk4_step(
    derivs: Callable[[tuple[float, ...]], tuple[float, ...]], y0: tuple[float, ...], dt: float
) -> tuple[float, ...]:
    """One classical fourth-order Runge-Kutta step."""
    dt2 = dt / 2.0
    k1 = derivs(y0)
    k2 = derivs(tuple(y + dt2 * k for y, k in zip(y0, k1)))
    k3 = derivs(tuple(y + dt2 * k for y, k in zip(y0, k2)))
    k4 = derivs(tuple(y + dt * k for y, k in zip(y0, k3)))
    return tuple(y + dt / 6.0 * (a + 2 * b + 2 * c + d) for y, a, b, c, d in zip(y0, k1, k2, k3, k4))


def _wrap(x: float, lo: float, hi: float) -> float:
    diff = hi - lo
    while x > hi:
        x = x - diff
    while x < lo:
        x = x + diff
    return x


def _bound(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def acrobot_terminal(physics: tuple[float, ...]) -> bool:
    t1, t2 = physics[0], physics[1]
    return -math.cos(t1) - math.cos(t2 + t1) > 1.0


def acrobot_energy(physics: tuple[float, ...]) -> float:
    """Total mechanical energy, potential measured from the pivot."""
    t1, t2, d1, d2 = physics
    m1, m2, l1, lc1, lc2, g = LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1, LINK_COM_POS_1, LINK_COM_POS_2, 9.8
    kinetic = 0.5 * (
        (m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(t2)) + 2 * LINK_MOI) * d1**2
        + 2 * (m2 * (lc2**2 + l1 * lc2 * math.cos(t2)) + LINK_MOI) * d1 * d2
        + (m2 * lc2**2 + LINK_MOI) * d2**2
    )
    potential = -m1 * g * lc1 * math.cos(t1) - m2 * g * (l1 * math.cos(t1) + lc2 * math.cos(t1 + t2))
    return kinetic + potential


def step_acrobot(state: EnvState, action: int) -> StepOutcome:
    _check_step(state, action, "acrobot", 3)
    torque = AVAIL_TORQUE[action]
    ns = rk4_step(lambda s: _acrobot_dsdt(s, torque), state.physics, ACROBOT_DT)
    physics = (
        _wrap(ns[0], -math.pi, math.pi),
        _wrap(ns[1], -math.pi, math.pi),
        _bound(ns[2], -MAX_VEL_1, MAX_VEL_1),
        _bound(ns[3], -MAX_VEL_2, MAX_VEL_2),
    )
    terminated = acrobot_terminal(physics)
    steps = state.step_count + 1
    truncated = not terminated and steps >= MAX_EPISODE_STEPS
    nxt = EnvState("acrobot", physics, steps, terminated, truncated)
    return StepOutcome(nxt, 0.0 if terminated else -1.0, terminated or truncated)


_OBSERVERS = {"cartpole": _cartpole_obs, "acrobot": _acrobot_obs}
_STEPPERS = {"cartpole": step_cartpole, "acrobot": step_acrobot}
_TERMINAL = {"cartpole": cartpole_terminal, "acrobot": acrobot_terminal}


def step(state: EnvState, action: int) -> StepOutcome:
    return _STEPPERS[state.env_id](state, action)


class Env:
    """Stateful wrapper: one episode at a time, seeds for each reset drawn from its own stream."""

    def __init__(self, env_id: str, seed: int):
        self.spec = env_spec(env_id)
        self.seed = seed
        self.env_id = self.spec.env_id
        self.obs_dim = self.spec.obs_dim
        self.n_actions = self.spec.n_actions
        self._seeds = make_rng(seed)
        self._step = _STEPPERS[self.env_id]
        self.state: EnvState | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is None:
            seed = next_seed(self._seeds)
        self.state = reset(self.env_id, seed)
        return self.state.observation

    def set_state(self, state: EnvState) -> np.ndarray:
        self.state = state
        return state.observation

    def step(self, action: int) -> tuple[np.ndarray, float, bool, bool]:
        """Advance one step; returns ``(observation, reward, terminated, truncated)``."""
        if self.state is None:
            raise ContractViolation("reset must be called before step")
        out = self._step(self.state, int(action))
        self.state = out.next_state
        return self.state.observation, out.reward, self.state.terminated, self.state.truncated
