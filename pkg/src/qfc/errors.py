"""Exception hierarchy shared by the propagators and the harness."""

from __future__ import annotations


class QFCError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(QFCError, ValueError):
    pass


class InvalidState(QFCError, ValueError):
    """A density matrix, spectral state or target vector violates its invariants."""


class DegenerateSpectrum(QFCError):
    """Two eigenvalues came closer than the gap tolerance.

    The eigenvalue/eigenvector flow divides by eigenvalue differences, so it
    is undefined at a crossing.
    """

    def __init__(self, message: str, step: int | None = None, gap: float | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
        self.gap = gap


class PositivityLoss(QFCError):
    """The integrated density matrix developed a clearly negative eigenvalue."""

    def __init__(self, message: str, step: int | None = None, eigenvalue: float | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
        self.eigenvalue = eigenvalue


class RegimeBreakdown(QFCError):
    """The good-control approximation left its validity domain.

    Raised when Delta or max |z_n| exceed the configured thresholds. This is
    a statement about the physics, not a numerical failure.
    """

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class AllRatesZero(QFCError, ValueError):
    pass


class ZeroDamping(QFCError, ValueError):
    pass


class ConfigError(QFCError):
    """Base for configuration problems (exit code 2 in the CLI)."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.field = field


class ValidationError(ConfigError):
    def __init__(self, message: str, field: str | None = None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class TrajectoryFailure(QFCError):
    """Too many trajectories of an ensemble failed."""
