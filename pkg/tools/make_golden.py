"""Regenerate the golden trajectory files from the Gymnasium reference environments.

Run once, offline:  python tools/make_golden.py tests/data
Requires ``gymnasium``; the package itself does not.

Each file is CSV with a header row, a comment line carrying the initial
physics state, and one row per step: step_index, action, observation
components, reward (17 significant digits).  Row 0 is the reset state with
action -1 and reward 0.
"""

import math
import sys
from pathlib import Path

import gymnasium as gym
import numpy as np

SEED = 7
N_STEPS = 50


def fmt(x):
    return format(float(x), ".17g")


def cartpole_obs(state):
    return [float(v) for v in state]


def acrobot_obs(state):
    t1, t2, d1, d2 = (float(v) for v in state)
    return [math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), d1, d2]


def generate(name, gym_id, actions, obs_fn, out_dir):
    """``actions`` is a list, or a callable mapping the current physics state to an action."""
    env = gym.make(gym_id)
    env.reset(seed=SEED)
    state = np.asarray(env.unwrapped.state, dtype=np.float64)
    obs = obs_fn(state)
    lines = [
        "# initial_physics=" + ",".join(fmt(v) for v in state),
        ",".join(["step_index", "action"] + [f"obs{i}" for i in range(len(obs))] + ["reward"]),
        ",".join(["0", "-1"] + [fmt(v) for v in obs] + [fmt(0.0)]),
    ]
    for i in range(1, N_STEPS + 1):
        a = actions(env.unwrapped.state) if callable(actions) else actions[i - 1]
        _, reward, terminated, truncated, _ = env.step(int(a))
        obs = obs_fn(np.asarray(env.unwrapped.state, dtype=np.float64))
        lines.append(",".join([str(i), str(int(a))] + [fmt(v) for v in obs] + [fmt(reward)]))
        if terminated or truncated:
            break
    path = Path(out_dir) / f"golden_{name}.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"{path}: {len(lines) - 3} steps, gymnasium {gym.__version__}")


def main(out_dir):
    rng = np.random.default_rng(SEED)
    # a PD-style push rule keeps the pole up; the resulting actions are recorded
    balance = lambda s: int(s[2] + 0.5 * s[3] + 0.01 * s[0] + 0.1 * s[1] > 0)
    generate("cartpole", "CartPole-v1", balance, cartpole_obs, out_dir)
    generate("acrobot", "Acrobot-v1", rng.integers(0, 3, size=N_STEPS), acrobot_obs, out_dir)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
