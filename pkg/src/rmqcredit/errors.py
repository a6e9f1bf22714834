"""Exception types shared across the package."""


class RmqError(Exception):
    """Base class for all package errors."""


class InvalidModelError(RmqError, ValueError):
    """Model coefficients or parameters violate their invariants."""


class NumericalOverflowError(RmqError, FloatingPointError):
    """A simulation step produced a non-finite value."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class QuantizationError(RmqError):
    """Grid optimization failed at a given time step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class SizeGuardError(RmqError, ValueError):
    """An exhaustive oracle was asked to enumerate too many paths."""


class WeightCollapseError(RmqError):
    """All particle weights vanished; more particles are needed."""

    def __init__(self, message: str, step: int, suggested_particles: int):
        super().__init__(message)
        self.step = step
        self.suggested_particles = suggested_particles


class InvalidCurveError(RmqError, ValueError):
    """A survival curve is not nonincreasing or not anchored at 1."""


class DegenerateContractError(RmqError, ValueError):
    """A contract whose risky duration vanishes."""


class OutOfBandError(RmqError, ValueError):
    """Option price outside the no-arbitrage band of the Black formula."""

    def __init__(self, message: str, bound: str):
        super().__init__(message)
        self.bound = bound


class ConfigError(RmqError, ValueError):
    """Malformed experiment or contract configuration."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
