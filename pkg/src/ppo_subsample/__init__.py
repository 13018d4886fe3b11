"""On-policy PPO with three rollout-decorrelation strategies, built on NumPy."""

from .advantage import AdvantageBatch, compute_advantages, gae, normalize_advantages, td_residuals
from .envs import Env, EnvState, StepOutcome, reset, step, step_acrobot, step_cartpole
from .errors import (
    ComparisonError,
    ConfigurationError,
    ContractViolation,
    OnPolicyViolation,
    PPOError,
    TrainingDivergence,
)
from .harness import ExperimentSpec, compare_runs, load_artifact, load_config, run_experiment
from .metrics import EvalResult, MetricsRecord, evaluate, explained_variance, grad_collinearity, value_bias
from .neural import DenseNet, OptimizerState, apply_update, clip_grad_norm, forward_policy, forward_value
from .ppo import ActorCritic, PpoConfig, UpdateReport, clipped_surrogate, ppo_update, probability_ratio, value_loss
from .sampling import (
    RolloutBuffer,
    SkipSampler,
    Transition,
    collect_rollout,
    skip_fixed_k,
    skip_random_k,
    subsample_indices,
)

__version__ = "0.1.0"
