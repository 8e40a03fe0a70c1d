"""Exception hierarchy shared by every tbclab module."""


class TBCLabError(Exception):
    """Base class for all library errors."""


class ParseError(TBCLabError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(TBCLabError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ResourceError(TBCLabError, RuntimeError):
    """A computation exceeded its configured work ceiling."""


class EstimationError(TBCLabError, RuntimeError):
    """Every bootstrap pair was skipped, so no instability could be formed."""


class ConfigError(TBCLabError, ValueError):
    pass


class CheckError(TBCLabError, RuntimeError):
    """Raised by the gradient checker when the loss is not finite."""
