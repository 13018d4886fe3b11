import itertools
import math

import numpy as np
import pytest
from scipy import stats

from conftest import random_buffer
from ppo_subsample.envs import Env
from ppo_subsample.errors import ConfigurationError
from ppo_subsample.ppo import ActorCritic, PpoConfig
from ppo_subsample.rng import make_rng
from ppo_subsample.sampling import (
    RolloutBuffer,
    SkipSampler,
    Transition,
    collect_rollout,
    dump_buffer_csv,
    sample_action,
    skip_buffer,
    skip_fixed_k,
    skip_random_k,
    subsample_indices,
    subsample_size,
)


def small_agent(env_id="cartpole", seed=0):
    env = Env(env_id, seed)
    ac = ActorCritic.build(env.obs_dim, env.n_actions, PpoConfig(hidden_sizes=(16, 16)), make_rng(seed + 100))
    return env, ac


def raw_stream(rng, n, p_end=0.1, obs_dim=2):
    """Transitions whose state encodes the raw index, so stored indices can be read back."""
    out = []
    for i in range(n):
        end = rng.random() < p_end or i == n - 1
        trunc = end and rng.random() < 0.3
        out.append(Transition(
            state=np.full(obs_dim, float(i)), action=int(rng.integers(2)), log_prob=-float(rng.uniform(0.1, 1.0)),
            reward=float(rng.normal()), next_state=np.full(obs_dim, float(i + 1)),
            done=int(end and not trunc), value=float(rng.normal()), truncated=int(trunc),
        ))
    return out


def episodes(transitions):
    eps, cur = [], []
    for t in transitions:
        cur.append(t)
        if t.episode_end:
            eps.append(cur)
            cur = []
    if cur:
        eps.append(cur)
    return eps


def source_index(t):
    return int(t.state[0])


# ------------------------------------------------------------------ rollout


def test_rollout_length_is_exact():
    env, ac = small_agent()
    buf = collect_rollout(env, ac, 1400, make_rng(1))
    assert len(buf) == 1400
    assert buf.states.shape == (1400, 4)
    assert np.all(buf.log_probs <= 0)
    assert set(np.unique(buf.dones)) <= {0, 1}
    assert buf.episode_ends.sum() >= 1  # an untrained policy fails well within 1400 steps


def test_rollout_greedy_is_deterministic():
    bufs = []
    for _ in range(2):
        env, ac = small_agent(seed=3)
        bufs.append(collect_rollout(env, ac, 300, make_rng(9), greedy=True))
    for name in ("states", "actions", "log_probs", "rewards", "dones", "values"):
        assert getattr(bufs[0], name).tobytes() == getattr(bufs[1], name).tobytes()


def test_rollout_replay_oracle():
    env, ac = small_agent("acrobot", seed=4)
    start = env.reset(77)
    buf = collect_rollout(env, ac, 700, make_rng(2))
    assert np.array_equal(buf.states[0], start)
    # a fresh env with the same seed reproduces the collector's reset stream
    replay = Env("acrobot", 4)
    obs = replay.reset(77)
    terminations = 0
    for t in range(len(buf)):
        assert np.array_equal(obs, buf.states[t])
        obs, r, term, trunc = replay.step(int(buf.actions[t]))
        assert r == buf.rewards[t]
        assert np.array_equal(obs, buf.next_states[t])
        assert (term, trunc) == (bool(buf.dones[t]), bool(buf.truncated[t]))
        terminations += term
        if term or trunc:
            obs = replay.reset()
    assert buf.dones.sum() == terminations


def test_rollout_values_are_collection_time(rng):
    env, ac = small_agent()
    buf = collect_rollout(env, ac, 50, make_rng(3))
    assert np.allclose(buf.values, ac.critic(buf.states)[:, 0], atol=1e-12)
    assert buf.policy_version == ac.policy_version


def test_rollout_rejects_zero_steps():
    env, ac = small_agent()
    with pytest.raises(ConfigurationError):
        collect_rollout(env, ac, 0, make_rng(0))


def test_sample_action_frequencies():
    rng = make_rng(0)
    lp = np.log(np.array([0.2, 0.5, 0.3]))
    counts = np.bincount([sample_action(lp, rng) for _ in range(20000)], minlength=3)
    assert np.allclose(counts / 20000, [0.2, 0.5, 0.3], atol=0.015)


def test_buffer_csv_dump(tmp_path, rng):
    buf = random_buffer(rng, 7)
    path = tmp_path / "buf.csv"
    dump_buffer_csv(path, buf)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("index,action,reward,done")
    assert len(lines) == 8
    assert float(lines[3].split(",")[2]) == buf.rewards[2]


# ----------------------------------------------------------------- skipping


def test_skip_example_k3():
    rewards = [1.0, 10.0, 100.0, 1000.0, 10000.0]
    stream = [Transition(np.array([float(i)]), 0, -0.5, r, np.array([i + 1.0]), 0, 0.0) for i, r in enumerate(rewards)]
    stored = skip_fixed_k(stream, SkipSampler(3))
    assert [source_index(t) for t in stored] == [0, 3]
    assert stored[0].reward == 1.0
    assert stored[1].reward == 10.0 + 100.0 + 1000.0 + 10000.0 or stored[1].reward == 1110.0 + 10000.0
    # the trailing r4 is folded in at end of stream; without it the stored reward is r1+r2+r3
    assert stored[1].next_state[0] == 4.0


def test_skip_example_k3_accumulates_preceding_rewards():
    rewards = [1.0, 10.0, 100.0, 1000.0]
    stream = [Transition(np.array([float(i)]), 0, -0.5, r, np.array([i + 1.0]), 0, 0.0) for i, r in enumerate(rewards)]
    sampler = SkipSampler(3)
    sampler.start_segment()
    out = [sampler.feed(t) for t in stream]
    assert out[1] is None and out[2] is None
    assert out[3].reward == 10.0 + 100.0 + 1000.0
    assert sampler.pending_reward == 0.0


def test_skip_k1_is_identity(rng):
    stream = raw_stream(rng, 200)
    stored = skip_fixed_k(stream, SkipSampler(1))
    assert len(stored) == len(stream)
    for a, b in zip(stored, stream):
        assert a.reward == b.reward and a.done == b.done and a.truncated == b.truncated
        assert np.array_equal(a.state, b.state) and np.array_equal(a.next_state, b.next_state)


@pytest.mark.parametrize("mode", ["fixed", "random_adaptive"])
def test_skip_reward_conservation(mode):
    rng = make_rng(11)
    for trial in range(200):
        stream = raw_stream(rng, int(rng.integers(1, 120)), p_end=0.08)
        k = int(rng.integers(1, 5))
        sampler = SkipSampler(k, mode, make_rng(trial))
        stored = skip_fixed_k(stream, sampler) if mode == "fixed" else skip_random_k(stream, sampler)
        raw_eps, kept_eps = episodes(stream), episodes(stored)
        assert len(raw_eps) == len(kept_eps)
        for raw, kept in zip(raw_eps, kept_eps):
            total = math.fsum(t.reward for t in raw)
            got = math.fsum(t.reward for t in kept)
            assert abs(got - total) <= 1e-12 * max(1.0, abs(total))
            assert kept[-1].done == raw[-1].done and kept[-1].truncated == raw[-1].truncated
            assert source_index(kept[0]) == source_index(raw[0])


def test_fixed_k2_parity_blind_spot():
    # one long episode: only even raw indices may ever be stored
    rng = make_rng(5)
    stream = raw_stream(rng, 501, p_end=0.0)
    stored = skip_fixed_k(stream, SkipSampler(2))
    idx = [source_index(t) for t in stored]
    assert idx == list(range(0, 501, 2))
    assert all(i % 2 == 0 for i in idx)


def test_fixed_gap_is_exact_within_episode(rng):
    stream = raw_stream(rng, 400, p_end=0.03)
    stored = skip_fixed_k(stream, SkipSampler(3))
    for raw, kept in zip(episodes(stream), episodes(stored)):
        idx = [source_index(t) for t in kept]
        assert idx == list(range(source_index(raw[0]), source_index(raw[-1]) + 1, 3))


def test_random_gaps_take_two_values_and_split_evenly():
    sampler = SkipSampler(3, "random_adaptive", make_rng(21))
    gaps = [sampler.next_gap() for _ in range(20000)]
    assert set(gaps) == {3, 4}
    frac = gaps.count(3) / len(gaps)
    assert abs(frac - 0.5) < 4 * math.sqrt(0.25 / len(gaps))


class PlusOne:
    def standard_normal(self):
        return 1.0


def test_random_with_positive_stub_equals_fixed(rng):
    stream = raw_stream(rng, 300, p_end=0.05)
    fixed = skip_fixed_k(stream, SkipSampler(2))
    stub = skip_random_k(stream, SkipSampler(2, "random_adaptive", PlusOne()))
    assert len(fixed) == len(stub)
    for a, b in zip(fixed, stub):
        assert a.reward == b.reward and source_index(a) == source_index(b) and a.done == b.done


def test_random_stored_gaps_within_episode(rng):
    stream = raw_stream(rng, 1000, p_end=0.0)
    stored = skip_random_k(stream, SkipSampler(2, "random_adaptive", make_rng(8)))
    idx = np.array([source_index(t) for t in stored])
    assert set(np.diff(idx).tolist()) == {2, 3}


def test_skip_buffer_keeps_version_and_source_steps(rng):
    buf = random_buffer(rng, 90, policy_version=4)
    out = skip_buffer(buf, SkipSampler(3))
    assert out.policy_version == 4
    assert out.source_steps == 90
    assert len(out) < 90
    assert math.isclose(out.rewards.sum(), buf.rewards.sum(), rel_tol=1e-12, abs_tol=1e-12)


def test_skip_sampler_rejects_bad_settings():
    with pytest.raises(ConfigurationError):
        SkipSampler(0)
    with pytest.raises(ConfigurationError):
        SkipSampler(2, "sometimes")
    with pytest.raises(ConfigurationError):
        SkipSampler(2, "random_adaptive")


# -------------------------------------------------------------- subsampling


def test_subsample_size_example():
    idx = subsample_indices(1400, 0.75, make_rng(0))
    assert len(idx) == 1050 == subsample_size(1400, 0.75)
    assert len(np.unique(idx)) == 1050
    assert idx.min() >= 0 and idx.max() < 1400


def test_subsample_full_is_identity():
    rng = make_rng(0)
    before = rng.bit_generator.state
    assert list(subsample_indices(10, 1.0, rng)) == list(range(10))
    assert rng.bit_generator.state == before


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5, float("nan")])
def test_subsample_rejects_bad_fraction(p):
    with pytest.raises(ConfigurationError):
        subsample_indices(10, p, make_rng(0))


def test_subsample_sizes_are_floor():
    rng = make_rng(3)
    for _ in range(300):
        total = int(rng.integers(1, 500))
        p = float(rng.uniform(0.01, 1.0))
        idx = subsample_indices(total, p, rng)
        assert len(idx) == math.floor(p * total + 1e-9)
        assert len(set(idx.tolist())) == len(idx)


def test_subsample_inclusion_frequency():
    rng = make_rng(2024)
    counts = np.zeros(20)
    draws = 100_000
    for _ in range(draws):
        counts[subsample_indices(20, 0.5, rng)] += 1
    assert np.max(np.abs(counts / draws - 0.5)) < 0.01
    # each draw puts exactly 10 of the 20 indices in; the counts are therefore a
    # sum of 10 * draws balls over 20 bins, tested for uniformity
    assert stats.chisquare(counts).pvalue > 0.001


def test_subsample_exact_enumeration():
    rng = make_rng(99)
    pairs = list(itertools.combinations(range(5), 2))
    freq = {p: 0 for p in pairs}
    draws = 50_000
    for _ in range(draws):
        idx = subsample_indices(5, 0.4, rng)
        freq[tuple(sorted(idx.tolist()))] += 1
    assert len(freq) == 10
    assert stats.chisquare(list(freq.values())).pvalue > 0.001
    assert max(abs(v / draws - 0.1) for v in freq.values()) < 0.01


def test_subsample_leaves_buffer_untouched(rng):
    buf = random_buffer(rng, 200)
    snapshot = {k: getattr(buf, k).tobytes() for k in ("states", "actions", "log_probs", "rewards", "dones", "values")}
    subsample_indices(len(buf), 0.3, make_rng(0))
    assert snapshot == {k: getattr(buf, k).tobytes() for k in snapshot}


def test_buffer_roundtrip_and_select(rng):
    buf = random_buffer(rng, 30)
    again = RolloutBuffer.from_transitions(buf.transitions())
    assert again.rewards.tobytes() == buf.rewards.tobytes()
    sub = buf.select([5, 1, 9])
    assert list(sub.actions) == [buf.actions[5], buf.actions[1], buf.actions[9]]
