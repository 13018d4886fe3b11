"""Exception hierarchy.

Every error carries a short ``category`` tag that the CLI prints in front of
the message and maps to an exit code.
"""


class PPOError(Exception):
    category = "error"
    exit_code = 1


class ConfigurationError(PPOError, ValueError):
    category = "config"
    exit_code = 2


class ContractViolation(PPOError, RuntimeError):
    """A caller broke a precondition (stepping a finished episode, shape mismatch, ...)."""

    category = "contract"
    exit_code = 3


class OnPolicyViolation(ContractViolation):
    """A rollout collected by an older policy was handed to an update."""

    category = "on-policy"


class TrainingDivergence(PPOError, FloatingPointError):
    category = "divergence"
    exit_code = 4


class ComparisonError(PPOError, ValueError):
    category = "compare"
    exit_code = 5
