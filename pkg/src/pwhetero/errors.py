"""Exception hierarchy. Each top-level class carries the CLI exit code."""


class PwHeteroError(Exception):
    exit_code = 1


class InputError(PwHeteroError, ValueError):
    """Bad user input: geometry, parameters, files, decks."""

    exit_code = 2


class GeometryError(InputError):
    pass


class MismatchError(GeometryError):
    def __init__(self, mismatch_percent, tolerance_percent):
        super().__init__(
            f"lattice mismatch {mismatch_percent:.3f}% exceeds tolerance "
            f"{tolerance_percent:.3f}%"
        )
        self.mismatch_percent = mismatch_percent


class ParameterError(InputError):
    pass


class ConfigurationError(InputError):
    pass


class MandatoryFieldError(InputError):
    pass


class ParseError(InputError):
    """Malformed text input; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, source=None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line


class SingularPointError(InputError):
    pass


class InsufficientBandsError(InputError):
    pass


class ConvergenceError(PwHeteroError):
    exit_code = 3


class ScfDivergenceError(ConvergenceError):
    pass


class DependencyError(PwHeteroError):
    exit_code = 4


class ConsistencyError(PwHeteroError, RuntimeError):
    """Internal cross-check failed (e.g. the two total-energy routes)."""
