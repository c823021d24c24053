"""Exception hierarchy shared across the package."""


class DRMechError(Exception):
    """Base class for all drmech errors."""


class DomainError(DRMechError, ValueError):
    """An input is outside the mathematical domain of an operation."""


class ConfigError(DRMechError, ValueError):
    """A scenario or CLI configuration is invalid."""


class DataError(DRMechError, ValueError):
    """Input data is malformed, inconsistent, or insufficient."""


class FitError(DataError):
    """Distribution fitting failed (too few or degenerate samples)."""


class ParseError(DataError):
    """A data file row could not be parsed; the message carries the line number."""


class IntegrityError(DataError):
    """Parsed data violates a uniqueness or ordering constraint."""


class PriorError(DRMechError, ValueError):
    """A population prior is degenerate (rejection sampling cannot make progress)."""


class InsufficientHistoryError(DataError):
    """Not enough qualifying days in the lookback window to form a baseline."""


class InfeasibleTargetError(DRMechError, ValueError):
    """The aggregate reduction target exceeds what the user pool can deliver."""


class SolverError(DRMechError, RuntimeError):
    """A numerical solve failed to converge."""


class UnboundedThresholdError(SolverError):
    """No sign change found below the reward cap while bracketing a threshold."""
