"""Exception hierarchy shared across the package."""


class RdpForgeError(Exception):
    """Base class for all package errors."""


class UsageError(RdpForgeError, ValueError):
    """An argument violates an operation's precondition."""


class DatasetFormatError(RdpForgeError, ValueError):
    """A dataset file could not be parsed or violates the alphabet."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IncompatibleSketchError(RdpForgeError, ValueError):
    """Sketches with different dimensions or hash seeds were combined."""


class UndefinedEstimateError(RdpForgeError, ValueError):
    """An estimate or distance was requested on an empty sample."""


class FamilySizeError(RdpForgeError, ValueError):
    """A language family grew past its configured size cap."""


class ConfigurationError(RdpForgeError, ValueError):
    """Inconsistent tester / store / CLI configuration."""


class UnsupportedEnvironmentError(RdpForgeError, ValueError):
    """The requested operation is not available for this environment."""


class EnumerationCapError(RdpForgeError, RuntimeError):
    """An exact enumeration would exceed its configured cap."""


class BudgetExceededError(RdpForgeError, RuntimeError):
    """A wall-clock budget ran out."""
