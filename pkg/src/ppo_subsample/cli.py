"""Command line for training runs, checkpoint evaluation and run comparison."""

from __future__ import annotations

import argparse
import logging
import sys

from .envs import Env, canonical_env_id
from .errors import ConfigurationError, PPOError
from .harness import compare_runs, load_artifact, load_config, run_experiment
from .metrics import evaluate, grad_collinearity
from .neural import OptimizerState, load_checkpoint
from .ppo import ActorCritic
from .rng import derive_seed, make_rng
from .sampling import collect_rollout


def _seed_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"--seeds: expected comma-separated integers, got {text!r}") from None


def _load_actor_critic(path: str) -> tuple[ActorCritic, dict]:
    nets, meta = load_checkpoint(path)
    if "actor" not in nets or "critic" not in nets:
        raise ConfigurationError(f"{path}: checkpoint needs both actor and critic")
    actor, critic = nets["actor"], nets["critic"]
    ac = ActorCritic(actor, critic, OptimizerState.for_net(actor), OptimizerState.for_net(critic))
    return ac, meta


def cmd_train(args: argparse.Namespace) -> int:
    spec = load_config(args.config)
    if args.seeds:
        spec.seeds = _seed_list(args.seeds)
        spec.__post_init__()
    artifact = run_experiment(spec, args.out, jobs=args.jobs)
    print(f"run {spec.name} ({artifact.spec_hash}) -> {artifact.directory}")
    for seed, err in sorted(artifact.failures.items()):
        print(f"  seed {seed}: {err}")
    return 4 if artifact.failures and len(artifact.failures) == len(spec.seeds) else 0


def cmd_eval(args: argparse.Namespace) -> int:
    ac, meta = _load_actor_critic(args.checkpoint)
    env_id = canonical_env_id(args.env or meta.get("env_id", "cartpole"))
    result = evaluate(ac, env_id, args.episodes, args.seed)
    print("returns: " + ", ".join(f"{r:g}" for r in result.episode_returns))
    print(f"mean: {result.mean_return:g}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    artifacts = [load_artifact(d) for d in args.dirs]
    comparison = compare_runs(artifacts, args.metric, args.svg, final_window=args.window)
    print(comparison.format_table())
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    ac, meta = _load_actor_critic(args.checkpoint)
    env_id = canonical_env_id(args.env or meta.get("env_id", "cartpole"))
    env = Env(env_id, derive_seed(args.seed, "env"))
    buffer = collect_rollout(env, ac, args.steps, make_rng(derive_seed(args.seed, "policy")))
    res = grad_collinearity(ac, buffer, make_rng(derive_seed(args.seed, "probe")), args.pairs)
    print(f"consecutive pairs  |cos| {res.consecutive:.6f}  signed {res.consecutive_signed:.6f}")
    print(f"random pairs       |cos| {res.random:.6f}  signed {res.random_signed:.6f}")
    print(f"difference         |cos| {res.difference:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppo-subsample", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every seed of an experiment config")
    p.add_argument("config", help="config file, or the name of a shipped config (e.g. cartpole_p75)")
    p.add_argument("--seeds", help="comma-separated seed list overriding the config")
    p.add_argument("--out", help="run directory (default: <output_dir>/<name>)")
    p.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel processes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--env", help="environment id (default: the one recorded in the checkpoint)")
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="compare finished runs on one metric")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--metric", required=True)
    p.add_argument("--svg", help="write an SVG plot here")
    p.add_argument("--window", type=int, default=3, help="checkpoints averaged for the final value")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("probe-collinearity", help="gradient collinearity of consecutive vs random transitions")
    p.add_argument("checkpoint")
    p.add_argument("--env")
    p.add_argument("--steps", type=int, default=1400)
    p.add_argument("--pairs", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except PPOError as exc:
        print(f"[{exc.category}] {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"[io] {exc}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
