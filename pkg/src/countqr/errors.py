"""Exception hierarchy shared across the package."""


class CountQRError(Exception):
    """Base class for package errors."""


class DomainError(CountQRError, ValueError):
    """An argument lies outside the domain of a function."""


class BracketError(CountQRError, ValueError):
    """A root-finding bracket does not contain a sign change."""


class DataError(CountQRError, ValueError):
    """Input data failed validation."""


class ConfigError(CountQRError, ValueError):
    """A run configuration is malformed or out of bounds."""


class NumericalError(CountQRError, ArithmeticError):
    """A numerical routine failed (non-convergence, singular system, ...)."""


class StageError(CountQRError):
    """A pipeline stage failed; ``cause`` holds the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
