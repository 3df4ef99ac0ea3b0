"""Shared exception types."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class NanGradient(RuntimeError):
    """A gradient contained NaN; the message names the offending parameter."""


class TrainingDiverged(RuntimeError):
    """A training loss became NaN; the message carries the step index."""
