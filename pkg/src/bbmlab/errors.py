"""Error taxonomy shared by all modules.

Exit-code mapping used by the CLI: configuration/domain errors are
validation failures (exit 1), numerical/accuracy/resource errors are
numerical failures (exit 2), failed acceptance checks exit 3.
"""


class ConfigurationError(ValueError):
    """Invalid configuration: bad tables, unknown operations, bad flags."""


class DomainError(ValueError):
    """Arguments outside an operation's mathematical domain."""


class AccuracyError(RuntimeError):
    """A computed quantity failed its internal accuracy requirement."""


class NumericalFailure(RuntimeError):
    """A solver did not converge; carries diagnostic state when available."""

    def __init__(self, message, estimates=None):
        super().__init__(message)
        self.estimates = estimates


class ResourceError(RuntimeError):
    """A run would exceed its grid/step/population budget."""


class ExtrapolationError(ValueError):
    """Requested evaluation point lies outside a stored grid."""
