import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ppo_subsample import harness
from ppo_subsample.cli import main
from ppo_subsample.errors import ComparisonError, ConfigurationError
from ppo_subsample.harness import (
    ExperimentSpec,
    compare_runs,
    load_artifact,
    load_config,
    parse_config,
    read_metrics_csv,
    run_experiment,
    shipped_configs,
)
from ppo_subsample.ppo import PpoConfig
from ppo_subsample.rng import derive_seed, fnv1a64, splitmix64

TINY_CFG = """\
# tiny smoke run
[experiment]
name = tiny
env_id = cartpole
seeds = 0, 1, 2
eval_interval_steps = 400
eval_episodes = 2
collinearity_pairs = 8

[ppo]
rollout_steps = 200
max_training_steps = 1_000
hidden_sizes = 8, 8
"""


def tiny_spec(**ppo) -> ExperimentSpec:
    spec = parse_config(TINY_CFG)
    if ppo:
        spec.ppo = PpoConfig(**{**spec.ppo.__dict__, **ppo})
    return spec


# ------------------------------------------------------------------- rng


def test_splitmix_and_fnv_reference_values():
    # first output of the reference SplitMix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert fnv1a64("") == 0xCBF29CE484222325
    assert fnv1a64("a") == 0xAF63DC4C8601EC8C


def test_derive_seed_separates_streams():
    seeds = {derive_seed(0, s, tag) for s in range(5) for tag in ("env", "init", "policy", "update", "eval")}
    assert len(seeds) == 25
    assert derive_seed(3, "env") == derive_seed(3, "env")


# ---------------------------------------------------------------- config


def test_shipped_p75_values():
    spec = load_config("cartpole_p75")
    c = spec.ppo
    assert (c.rollout_steps, c.clip_epsilon, c.entropy_coeff, c.gamma, c.gae_lambda) == (1400, 0.2, 0.01, 0.99, 0.98)
    assert (c.subsample_p, c.method, c.epochs_per_update, c.actor_lr, c.critic_lr) == (0.75, "subsample", 1, 3e-4, 5e-4)
    assert spec.env_id == "cartpole" and spec.seeds == [0, 1, 2, 3, 4]


def test_every_shipped_config_loads():
    names = shipped_configs()
    assert {"cartpole_vanilla", "cartpole_p75", "acrobot_vanilla", "acrobot_p80"} <= set(names)
    for name in names:
        spec = load_config(name)
        assert spec.name == name


def test_empty_config_gives_defaults():
    spec = parse_config("")
    assert spec.ppo == PpoConfig()
    assert spec.seeds == [0, 1, 2, 3, 4] and spec.eval_interval_steps == 10_000


def test_range_error_names_key():
    with pytest.raises(ConfigurationError, match="subsample_p"):
        parse_config("[ppo]\nmethod = subsample\nsubsample_p = 1.5\n")


def test_unknown_key_and_section():
    with pytest.raises(ConfigurationError, match="learning_rate"):
        parse_config("[ppo]\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigurationError, match="training"):
        parse_config("[training]\nx = 1\n")


def test_parse_error_reports_line():
    with pytest.raises(ConfigurationError, match="line 3"):
        parse_config("[ppo]\nclip_epsilon = 0.2\nthis line is junk\n")
    with pytest.raises(ConfigurationError, match="line 1"):
        parse_config("clip_epsilon = 0.2\n")


def test_bad_value_type():
    with pytest.raises(ConfigurationError, match="rollout_steps"):
        parse_config("[ppo]\nrollout_steps = 12.5\n")
    with pytest.raises(ConfigurationError, match="seeds"):
        parse_config("[experiment]\nseeds = 1, 1\n")


def test_numeric_forms():
    spec = parse_config("[ppo]\nmax_training_steps = 5e5\nmax_grad_norm_actor = 0.5\nminibatch_size = full\n")
    assert spec.ppo.max_training_steps == 500_000
    assert spec.ppo.max_grad_norm_actor == 0.5
    assert spec.ppo.minibatch_size is None


def test_spec_hash_ignores_output_dir():
    a, b = tiny_spec(), tiny_spec()
    b.output_dir = "elsewhere"
    assert a.spec_hash() == b.spec_hash()
    assert tiny_spec(seed=1).spec_hash() != a.spec_hash()


# ---------------------------------------------------------------- running


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    return run_experiment(tiny_spec(), tmp_path_factory.mktemp("run") / "a")


def test_run_layout(tiny_run):
    d = tiny_run.directory
    for name in ("spec.json", "aggregate.csv", "status.json", "seed_0.csv", "seed_0.ckpt"):
        assert (d / name).exists()
    rows = read_metrics_csv(d / "seed_0.csv")
    assert [r["global_step"] for r in rows] == [400, 800, 1000]
    assert all(r["grad_collinearity"] is not None for r in rows)
    assert json.loads((d / "status.json").read_text())["seeds"] == {"0": "ok", "1": "ok", "2": "ok"}


def test_run_is_deterministic(tiny_run, tmp_path):
    again = run_experiment(tiny_spec(), tmp_path / "b")
    for seed in (0, 1, 2):
        assert (again.directory / f"seed_{seed}.csv").read_bytes() == (tiny_run.directory / f"seed_{seed}.csv").read_bytes()
    assert (again.directory / "aggregate.csv").read_bytes() == (tiny_run.directory / "aggregate.csv").read_bytes()


def test_seed_order_does_not_matter(tiny_run, tmp_path):
    spec = tiny_spec()
    spec.seeds = [2, 0]
    other = run_experiment(spec, tmp_path / "c")
    for seed in (0, 2):
        assert (other.directory / f"seed_{seed}.csv").read_bytes() == (tiny_run.directory / f"seed_{seed}.csv").read_bytes()


def test_aggregate_is_mean_of_seeds(tiny_run):
    per_seed = [read_metrics_csv(tiny_run.directory / f"seed_{s}.csv") for s in (0, 1, 2)]
    agg = read_metrics_csv(tiny_run.aggregate_csv)
    for i, row in enumerate(agg):
        vals = np.array([rows[i]["eval_reward"] for rows in per_seed])
        assert abs(row["eval_reward_mean"] - vals.mean()) < 1e-12
        assert abs(row["eval_reward_std"] - vals.std()) < 1e-12
        assert row["n_seeds"] == 3


def test_divergence_is_isolated(tmp_path, monkeypatch):
    real = harness.collect_rollout
    poisoned = derive_seed(0, 1, "env")

    def collect(env, *args, **kwargs):
        buf = real(env, *args, **kwargs)
        if env.seed == poisoned:
            buf.rewards[:] = np.nan
        return buf

    monkeypatch.setattr(harness, "collect_rollout", collect)
    artifact = run_experiment(tiny_spec(), tmp_path / "d")
    assert set(artifact.failures) == {1}
    assert "divergence" in artifact.failures[1]
    assert set(artifact.checkpoints) == {0, 2}
    status = json.loads((artifact.directory / "status.json").read_text())["seeds"]
    assert status["0"] == "ok" and status["1"] != "ok"
    # the failed seed wrote no checkpoint rows, so nothing is common across all three
    with open(artifact.aggregate_csv) as fh:
        assert len(list(csv.reader(fh))) == 1


def test_skip_methods_run(tmp_path):
    for method in ("fixed_k", "random_k"):
        spec = tiny_spec(method=method)
        spec.seeds = [0]
        artifact = run_experiment(spec, tmp_path / method)
        assert not artifact.failures
        assert [r["global_step"] for r in read_metrics_csv(artifact.seed_csvs[0])] == [400, 800, 1000]


# ---------------------------------------------------------------- compare


def test_compare_with_self(tiny_run, tmp_path):
    svg = tmp_path / "plot.svg"
    comparison = compare_runs([tiny_run, tiny_run], "eval_reward", svg)
    rows = comparison.rows()
    assert rows[1]["diff_final_mean"] == 0.0 and rows[1]["diff_whole_run_variance"] == 0.0
    for key in ("final_mean", "final_std", "whole_run_variance"):
        assert rows[0][key] == rows[1][key]
    root = ET.parse(svg).getroot()
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2
    assert "eval_reward" in comparison.format_table()


def test_compare_schedule_mismatch(tiny_run, tmp_path):
    spec = tiny_spec()
    spec.seeds = [0]
    spec.eval_interval_steps = 600
    other = run_experiment(spec, tmp_path / "e")
    with pytest.raises(ComparisonError, match="schedule"):
        compare_runs([tiny_run, other], "eval_reward")


def test_compare_unknown_metric(tiny_run):
    with pytest.raises(ComparisonError):
        compare_runs([tiny_run], "happiness")


def test_load_artifact_roundtrip(tiny_run):
    loaded = load_artifact(tiny_run.directory)
    assert loaded.spec_hash == tiny_run.spec_hash
    assert set(loaded.seed_csvs) == {0, 1, 2}


# -------------------------------------------------------------------- cli


def test_cli_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    out = tmp_path / "cli_run"
    assert main(["train", str(cfg), "--seeds", "4", "--out", str(out)]) == 0
    assert (out / "seed_4.csv").exists()
    assert main(["eval", str(out / "seed_4.ckpt"), "--episodes", "2"]) == 0
    assert "mean:" in capsys.readouterr().out
    assert main(["probe-collinearity", str(out / "seed_4.ckpt"), "--steps", "100", "--pairs", "8"]) == 0
    assert "difference" in capsys.readouterr().out
    assert main(["compare", str(out), str(out), "--metric", "entropy", "--svg", str(tmp_path / "p.svg")]) == 0
    assert (tmp_path / "p.svg").exists()


def test_cli_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[ppo]\nsubsample_p = 1.5\nmethod = subsample\n")
    assert main(["train", str(bad)]) == 2
    assert "[config]" in capsys.readouterr().err
    assert main(["train", "no_such_config"]) == 2
    assert main(["eval", str(tmp_path / "missing.ckpt")]) == 6
    assert main(["compare", str(tmp_path), "--metric", "entropy"]) == 5
    assert "[compare]" in capsys.readouterr().err


def test_parallel_jobs_match_serial(tiny_run, tmp_path):
    parallel = run_experiment(tiny_spec(), tmp_path / "jobs", jobs=2)
    for seed in (0, 1, 2):
        assert (parallel.directory / f"seed_{seed}.csv").read_bytes() == (tiny_run.directory / f"seed_{seed}.csv").read_bytes()
