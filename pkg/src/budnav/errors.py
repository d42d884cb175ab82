"""Exception types shared across the package."""


class BudnavError(Exception):
    """Base class for all package-specific errors."""


class GenerationFailed(BudnavError):
    """World or episode generation exhausted its retry budget."""


class MalformedPlan(BudnavError):
    """Action sequence cannot be compiled into an instruction."""


class InvalidGoal(BudnavError):
    """Goal cell is blocked or out of bounds."""


class Unreachable(BudnavError):
    """No action sequence reaches the goal zone from the start pose."""


class UnknownToken(BudnavError):
    """Instruction token id outside the configured vocabulary."""


class DimensionMismatch(BudnavError):
    """Array shape does not match the policy configuration."""


class GroupTooSmall(BudnavError):
    """Rollout group has fewer than two members."""


class SnapshotMismatch(BudnavError):
    """Recorded rollout logits disagree with the behaviour snapshot."""


class NotAFailure(BudnavError):
    """Rectification was asked to process a trajectory without a trigger."""


class NonFiniteGradient(BudnavError):
    """A loss or gradient went NaN/Inf; signals optimisation divergence."""


class ConfigError(BudnavError):
    """Config file is missing, unparseable, or has unknown/invalid keys."""


class CheckpointError(BudnavError):
    """Checkpoint file is corrupt or inconsistent with its header."""


class TraceError(BudnavError):
    """Trace file is malformed or diverges from re-execution."""


class SuiteError(BudnavError):
    """Benchmark suite file is malformed or violates the split contract."""
