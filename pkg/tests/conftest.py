import sys
from pathlib import Path

import numpy as np
import pytest

from ppo_subsample.sampling import RolloutBuffer

DATA = Path(__file__).parent / "data"


def random_buffer(rng: np.random.Generator, n: int, obs_dim: int = 4, n_actions: int = 2, p_end: float = 0.05,
                  policy_version: int = 0) -> RolloutBuffer:
    """Synthetic rollout with random episode ends (terminations and truncations)."""
    ends = rng.random(n) < p_end
    trunc = ends & (rng.random(n) < 0.3)
    return RolloutBuffer(
        states=rng.normal(size=(n, obs_dim)),
        actions=rng.integers(0, n_actions, size=n),
        log_probs=-rng.uniform(0.05, 2.0, size=n),
        rewards=rng.normal(size=n),
        next_states=rng.normal(size=(n, obs_dim)),
        dones=(ends & ~trunc).astype(np.int64),
        truncated=trunc.astype(np.int64),
        values=rng.normal(size=n),
        policy_version=policy_version,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def balance_action(physics) -> int:
    """PD-style push rule that keeps CartPole up for a full episode."""
    return int(physics[2] + 0.5 * physics[3] + 0.01 * physics[0] + 0.1 * physics[1] > 0)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.summary_line(number))
