"""Exception hierarchy.  Each class carries the CLI exit code it maps to."""


class BosedynError(Exception):
    exit_code = 1


class ConfigError(BosedynError, ValueError):
    """Invalid parameters or a violated precondition."""


class DimensionError(ConfigError):
    """Objects defined on incompatible grids or bases."""


class NormalizationError(ConfigError):
    pass


class DomainError(ConfigError):
    """A vector is not supported where the operation requires it."""


class PreconditionError(ConfigError):
    pass


class FitError(ConfigError):
    pass


class CoverageError(ConfigError):
    """A trajectory does not cover the requested time window."""


class DivergenceError(BosedynError, ArithmeticError):
    """Non-finite values or a tripped blow-up guard during time stepping."""

    exit_code = 2

    def __init__(self, message: str, last_time: float = float("nan"), tag: str | None = None):
        super().__init__(message)
        self.last_time = last_time
        self.tag = tag


class ConvergenceError(BosedynError, ArithmeticError):
    exit_code = 2

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ToleranceError(ConvergenceError):
    """Krylov propagation failed to reach the requested accuracy."""


class SizeError(BosedynError, MemoryError):
    """Resource cap exceeded."""

    exit_code = 3


class TruncationError(SizeError):
    """Sector tail mass above tolerance; carries a suggested truncation."""

    def __init__(self, message: str, suggested: int | None = None):
        super().__init__(message)
        self.suggested = suggested
