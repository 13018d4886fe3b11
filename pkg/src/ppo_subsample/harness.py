"""Experiment orchestration: config files, multi-seed training, CSV logs, comparison.

Config grammar (read with :mod:`configparser`)::

    # comment
    [experiment]
    name = cartpole_p75
    env_id = cartpole
    seeds = 0, 1, 2, 3, 4

    [ppo]
    method = subsample
    subsample_p = 0.75

Only the ``[experiment]`` and ``[ppo]`` sections exist; unknown sections or
keys are rejected.  Anything left out takes the defaults of
:class:`ExperimentSpec` and :class:`~ppo_subsample.ppo.PpoConfig`.

Random streams for one run are derived with :func:`~ppo_subsample.rng.derive_seed`
from ``(ppo.seed, run seed, stream tag)``, where the tag is one of ``"env"``,
``"init"``, ``"policy"``, ``"update"``, ``"skip"``, ``"eval"``, ``"probe"``.
The seed's position in the list plays no part, so reordering seeds never
changes a run.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .advantage import compute_advantages
from .envs import Env, canonical_env_id
from .errors import ComparisonError, ConfigurationError, TrainingDivergence
from .metrics import MetricsRecord, evaluate, explained_variance, grad_collinearity, mean_policy_entropy, series_variance, value_bias
from .neural import save_checkpoint
from .ppo import ActorCritic, PpoConfig, ppo_update
from .rng import derive_seed, make_rng
from .sampling import SkipSampler, collect_rollout, skip_buffer

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
METRIC_COLUMNS = [c for c in MetricsRecord.columns() if c != "global_step"]


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    env_id: str = "cartpole"
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    eval_interval_steps: int = 10_000
    eval_episodes: int = 5
    probe_collinearity: bool = True
    collinearity_pairs: int = 32
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        self.env_id = canonical_env_id(self.env_id)
        if not self.seeds:
            raise ConfigurationError("seeds: at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(f"seeds: must be distinct (got {self.seeds})")
        if self.eval_interval_steps < 1:
            raise ConfigurationError("eval_interval_steps: must be >= 1")
        if self.eval_episodes < 1:
            raise ConfigurationError("eval_episodes: must be >= 1")
        if self.collinearity_pairs < 1:
            raise ConfigurationError("collinearity_pairs: must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ppo"]["hidden_sizes"] = list(self.ppo.hidden_sizes)
        return d

    def spec_hash(self) -> str:
        """Hash of everything that affects the numbers (output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- config io

_EXPERIMENT_KEYS = {f.name: f for f in dataclasses.fields(ExperimentSpec) if f.name != "ppo"}
_PPO_KEYS = {f.name: f for f in dataclasses.fields(PpoConfig)}


def shipped_configs() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("ppo_subsample").joinpath("configs").iterdir() if p.name.endswith(".cfg"))


def _resolve(path: str | Path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    shipped = resources.files("ppo_subsample").joinpath("configs", f"{path}.cfg")
    if shipped.is_file():
        return Path(str(shipped))
    raise ConfigurationError(f"config file {path} not found (shipped configs: {', '.join(shipped_configs())})")


def _parse_value(key: str, raw: str, typ: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            value = float(raw.replace("_", ""))  # accepts 500_000 and 5e5
            if not value.is_integer():
                raise ValueError(raw)
            return int(value)
        if typ == "float":
            return float(raw)
        if typ == "float | None":
            return None if raw.lower() in ("", "none", "off") else float(raw)
        if typ == "int | None":
            return None if raw.lower() in ("", "none", "full") else int(raw)
        if typ in ("list[int]", "tuple[int, ...]"):
            return [int(v) for v in raw.replace(" ", "").split(",") if v]
        return raw
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {typ}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentSpec:
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None, default_section="__none__"
    )
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigurationError(f"{source}: line {exc.lineno}: expected a [section] header before {exc.line.strip()!r}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigurationError(f"{source}: line {lineno}: expected 'key = value', got {line}") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigurationError(f"{source}: line {exc.lineno}: key {exc.option!r} repeated in [{exc.section}]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigurationError(f"{source}: line {exc.lineno}: section [{exc.section}] repeated") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc.message}") from None

    exp_kwargs: dict = {}
    ppo_kwargs: dict = {}
    for section in parser.sections():
        if section == "experiment":
            table, target = _EXPERIMENT_KEYS, exp_kwargs
        elif section == "ppo":
            table, target = _PPO_KEYS, ppo_kwargs
        else:
            raise ConfigurationError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in table:
                raise ConfigurationError(f"{source}: unknown key {key!r} in [{section}]")
            target[key] = _parse_value(key, raw, str(table[key].type))
    if "hidden_sizes" in ppo_kwargs:
        ppo_kwargs["hidden_sizes"] = tuple(ppo_kwargs["hidden_sizes"])
    return ExperimentSpec(ppo=PpoConfig(**ppo_kwargs), **exp_kwargs)


def load_config(path: str | Path) -> ExperimentSpec:
    """Read a config file (or the name of a shipped config) into an :class:`ExperimentSpec`."""
    p = _resolve(path)
    return parse_config(p.read_text(), source=str(p))


# ----------------------------------------------------------------- training


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


class CsvLog:
    """Append-only metrics CSV, flushed after every row."""

    def __init__(self, path: Path, columns: Sequence[str]):
        self.path = path
        self.columns = list(columns)
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.columns)
        self._fh.flush()

    def write(self, row: dict) -> None:
        self._writer.writerow([_fmt(row.get(c)) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


@dataclass
class SeedResult:
    seed: int
    csv_path: Path
    checkpoint_path: Path | None
    records: list[MetricsRecord]
    error: str | None = None


def train_seed(spec: ExperimentSpec, seed: int, out_dir: Path) -> SeedResult:
    """Full training loop for one seed: collect, estimate advantages, update, evaluate."""
    cfg = spec.ppo

    def stream(*tags: int | str) -> int:
        return derive_seed(cfg.seed, seed, *tags)

    env = Env(spec.env_id, stream("env"))
    ac = ActorCritic.build(env.obs_dim, env.n_actions, cfg, make_rng(stream("init")))
    policy_rng = make_rng(stream("policy"))
    update_rng = make_rng(stream("update"))
    probe_rng = make_rng(stream("probe"))
    sampler = None
    if cfg.method in ("fixed_k", "random_k"):
        mode = "fixed" if cfg.method == "fixed_k" else "random_adaptive"
        sampler = SkipSampler(cfg.base_k, mode, make_rng(stream("skip")))

    csv_path = out_dir / f"seed_{seed}.csv"
    ckpt_path = out_dir / f"seed_{seed}.ckpt"
    logger = CsvLog(csv_path, MetricsRecord.columns())
    records: list[MetricsRecord] = []
    global_step = 0
    next_eval = spec.eval_interval_steps
    checkpoint = 0
    error = None
    try:
        while global_step < cfg.max_training_steps:
            raw = collect_rollout(env, ac, cfg.rollout_steps, policy_rng)
            global_step += len(raw)
            buffer = skip_buffer(raw, sampler) if sampler is not None else raw
            adv = compute_advantages(buffer, ac.critic, cfg.gamma, cfg.gae_lambda)
            is_checkpoint = global_step >= next_eval or global_step >= cfg.max_training_steps
            collinearity = None
            if is_checkpoint and spec.probe_collinearity and len(buffer) >= 3:
                probe = grad_collinearity(ac, buffer, probe_rng, spec.collinearity_pairs, advantages=adv.advantages)
                collinearity = probe.difference
            report = ppo_update(ac, buffer, adv, cfg, update_rng)
            if not is_checkpoint:
                continue
            result = evaluate(ac, spec.env_id, spec.eval_episodes, stream("eval", checkpoint))
            record = MetricsRecord(
                global_step=global_step,
                eval_reward=result.mean_return,
                approx_kl=report.approx_kl,
                entropy=mean_policy_entropy(ac.actor, buffer.states),
                explained_variance=explained_variance(buffer.values, adv.returns),
                value_bias=value_bias(buffer.values, adv.returns),
                critic_loss=report.value_loss,
                clip_fraction=report.clip_fraction,
                grad_collinearity=collinearity,
            )
            if not record.is_finite():
                raise TrainingDivergence(f"non-finite metric at step {global_step}")
            records.append(record)
            logger.write(record.as_dict())
            log.info("%s seed=%d step=%d eval=%.1f kl=%.2e", spec.name, seed, global_step, record.eval_reward, record.approx_kl)
            checkpoint += 1
            while next_eval <= global_step:
                next_eval += spec.eval_interval_steps
    except TrainingDivergence as exc:
        error = f"divergence at step {global_step}: {exc}"
        log.warning("%s seed=%d aborted: %s", spec.name, seed, error)
    finally:
        logger.close()
    if error is None:
        save_checkpoint(ckpt_path, {"actor": ac.actor, "critic": ac.critic},
                        {"env_id": spec.env_id, "seed": str(seed), "global_step": str(global_step)})
    return SeedResult(seed, csv_path, ckpt_path if error is None else None, records, error)


@dataclass
class RunArtifact:
    directory: Path
    spec_hash: str
    env_id: str
    seed_csvs: dict[int, Path]
    aggregate_csv: Path
    checkpoints: dict[int, Path]
    failures: dict[int, str]


def read_metrics_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append({k: (None if v == "" else (int(v) if k == "global_step" else float(v))) for k, v in row.items()})
        return rows


def aggregate(seed_csvs: dict[int, Path], out_path: Path) -> None:
    """Mean and population std across seeds, for checkpoints every seed reached."""
    per_seed = {s: {r["global_step"]: r for r in read_metrics_csv(p)} for s, p in seed_csvs.items()}
    common = sorted(set.intersection(*(set(rows) for rows in per_seed.values()))) if per_seed else []
    columns = ["global_step", "n_seeds"] + [f"{m}_{stat}" for m in METRIC_COLUMNS for stat in ("mean", "std")]
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for step in common:
            row = [str(step), str(len(per_seed))]
            for m in METRIC_COLUMNS:
                vals = [per_seed[s][step][m] for s in per_seed]
                if any(v is None for v in vals):
                    row += ["", ""]
                else:
                    arr = np.array(vals, dtype=np.float64)
                    row += [_fmt(np.mean(arr)), _fmt(np.std(arr))]
            w.writerow(row)


def _train_job(args: tuple[ExperimentSpec, int, Path]) -> SeedResult:
    return train_seed(*args)


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None, jobs: int = 1) -> RunArtifact:
    """Train every seed, then write ``aggregate.csv`` and ``status.json``.

    Layout of the run directory::

        spec.json        resolved spec and its hash
        seed_<s>.csv     one metrics row per checkpoint
        seed_<s>.ckpt    final networks (absent for a diverged seed)
        aggregate.csv    mean/std across seeds per checkpoint
        status.json      per-seed outcome
    """
    directory = Path(out_dir) if out_dir is not None else Path(spec.output_dir) / spec.name
    directory.mkdir(parents=True, exist_ok=True)
    digest = spec.spec_hash()
    (directory / "spec.json").write_text(json.dumps({"spec_hash": digest, **spec.to_dict()}, indent=2, sort_keys=True) + "\n")

    tasks = [(spec, s, directory) for s in spec.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_job, tasks))
    else:
        results = [train_seed(*t) for t in tasks]

    seed_csvs = {r.seed: r.csv_path for r in results}
    aggregate_path = directory / "aggregate.csv"
    aggregate(seed_csvs, aggregate_path)
    failures = {r.seed: r.error for r in results if r.error}
    status = {str(r.seed): r.error or "ok" for r in results}
    (directory / "status.json").write_text(json.dumps({"spec_hash": digest, "seeds": status}, indent=2) + "\n")
    return RunArtifact(directory, digest, spec.env_id, seed_csvs, aggregate_path,
                       {r.seed: r.checkpoint_path for r in results if r.checkpoint_path}, failures)


def load_artifact(directory: str | Path) -> RunArtifact:
    d = Path(directory)
    try:
        spec = json.loads((d / "spec.json").read_text())
        status = json.loads((d / "status.json").read_text())
    except FileNotFoundError as exc:
        raise ComparisonError(f"{d} is not a finished run directory ({exc.filename} missing)") from None
    seeds = [int(s) for s in status["seeds"]]
    return RunArtifact(
        d, spec["spec_hash"], spec["env_id"],
        {s: d / f"seed_{s}.csv" for s in seeds},
        d / "aggregate.csv",
        {s: d / f"seed_{s}.ckpt" for s in seeds if (d / f"seed_{s}.ckpt").exists()},
        {int(s): v for s, v in status["seeds"].items() if v != "ok"},
    )


# --------------------------------------------------------------- comparison


@dataclass
class RunSummary:
    name: str
    steps: list[int]
    mean_curve: list[float]
    std_curve: list[float]
    final_mean: float
    final_std: float
    whole_run_variance: float
    trailing_variance: float


def summarize(artifact: RunArtifact, metric: str, final_window: int = 3, trailing_window: int = 10) -> RunSummary:
    if metric not in METRIC_COLUMNS:
        raise ComparisonError(f"unknown metric {metric!r}; choose from {', '.join(METRIC_COLUMNS)}")
    per_seed = {s: read_metrics_csv(p) for s, p in artifact.seed_csvs.items() if p.exists()}
    per_seed = {s: rows for s, rows in per_seed.items() if rows}
    if not per_seed:
        raise ComparisonError(f"{artifact.directory}: no metric rows")
    agg = read_metrics_csv(artifact.aggregate_csv)
    steps = [r["global_step"] for r in agg]
    mean_curve = [r[f"{metric}_mean"] for r in agg]
    std_curve = [r[f"{metric}_std"] for r in agg]

    def tail_mean(rows: list[dict]) -> float:
        vals = [r[metric] for r in rows[-final_window:] if r[metric] is not None]
        return float(np.mean(vals)) if vals else float("nan")

    finals = np.array([tail_mean(rows) for rows in per_seed.values()])
    whole = np.array([series_variance([r[metric] for r in rows]) for rows in per_seed.values()])
    trailing = np.array([series_variance([r[metric] for r in rows], trailing_window) for rows in per_seed.values()])
    return RunSummary(
        artifact.directory.name, steps, mean_curve, std_curve,
        float(np.mean(finals)), float(np.std(finals)), float(np.mean(whole)), float(np.mean(trailing)),
    )


@dataclass
class Comparison:
    metric: str
    summaries: list[RunSummary]

    def rows(self) -> list[dict]:
        base = self.summaries[0]
        out = []
        for s in self.summaries:
            out.append({
                "run": s.name,
                "final_mean": s.final_mean,
                "final_std": s.final_std,
                "whole_run_variance": s.whole_run_variance,
                "trailing_variance": s.trailing_variance,
                "diff_final_mean": s.final_mean - base.final_mean,
                "diff_whole_run_variance": s.whole_run_variance - base.whole_run_variance,
            })
        return out

    def format_table(self) -> str:
        rows = self.rows()
        cols = list(rows[0])
        cells = [[r[c] if isinstance(r[c], str) else f"{r[c]:.6g}" for c in cols] for r in rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        lines = [f"metric: {self.metric}", "  ".join(c.ljust(w) for c, w in zip(cols, widths))]
        lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
        return "\n".join(lines)


def compare_runs(artifacts: Sequence[RunArtifact], metric: str, svg_path: str | Path | None = None,
                 final_window: int = 3) -> Comparison:
    """Side-by-side final values and whole-run variance of one metric; the first run is the baseline."""
    if not artifacts:
        raise ComparisonError("nothing to compare")
    envs = {a.env_id for a in artifacts}
    if len(envs) > 1:
        raise ComparisonError(f"runs use different environments: {sorted(envs)}")
    summaries = [summarize(a, metric, final_window) for a in artifacts]
    schedule = summaries[0].steps
    for s in summaries[1:]:
        if s.steps != schedule:
            raise ComparisonError(f"checkpoint schedule of {s.name} differs from {summaries[0].name}")
    comparison = Comparison(metric, summaries)
    if svg_path is not None:
        Path(svg_path).write_text(render_svg(summaries, metric))
    return comparison


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def render_svg(summaries: Sequence[RunSummary], metric: str, width: int = 720, height: int = 420) -> str:
    """Mean curve per run with a shaded +-1 std band."""
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [x for s in summaries for x in s.steps]
    ys = [y for s in summaries for m, sd in zip(s.mean_curve, s.std_curve) if m is not None
          for y in (m - (sd or 0.0), m + (sd or 0.0))]
    x0, x1 = (min(xs), max(xs)) if xs else (0, 1)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0

    def px(x: float) -> float:
        return left + (x - x0) / (x1 - x0) * pw

    def py(y: float) -> float:
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(metric)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left}" y="{top + ph + 20}" font-size="11">{x0}</text>',
        f'<text x="{left + pw}" y="{top + ph + 20}" font-size="11" text-anchor="end">{x1}</text>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" font-size="12" text-anchor="middle">global step</text>',
        f'<text x="{left - 6}" y="{top + ph}" font-size="11" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{left - 6}" y="{top + 10}" font-size="11" text-anchor="end">{y1:.4g}</text>',
    ]
    for i, s in enumerate(summaries):
        color = _PALETTE[i % len(_PALETTE)]
        pts = [(x, m, sd or 0.0) for x, m, sd in zip(s.steps, s.mean_curve, s.std_curve) if m is not None]
        if pts:
            upper = [f"{px(x):.2f},{py(m + sd):.2f}" for x, m, sd in pts]
            lower = [f"{px(x):.2f},{py(m - sd):.2f}" for x, m, sd in reversed(pts)]
            parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{px(x):.2f},{py(m):.2f}" for x, m, _ in pts)
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{left + 8}" y="{top + 14 + 14 * i}" font-size="11" fill="{color}">{escape(s.name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
