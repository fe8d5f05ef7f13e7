"""Exception hierarchy shared by all modules."""


class MicroforecastError(Exception):
    """Base class for every error raised by this package."""


class InputError(MicroforecastError, ValueError):
    """Unusable input (empty portfolio, bad config, unknown family, ...)."""


class ParseError(InputError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(InputError):
    """A record violates a data invariant."""

    def __init__(self, message, claim_id=None):
        self.claim_id = claim_id
        if claim_id is not None:
            message = f"claim {claim_id!r}: {message}"
        super().__init__(message)


class DomainError(MicroforecastError, ValueError):
    """A time argument lies outside the domain of a model."""


class ParameterError(MicroforecastError, ValueError):
    """Parameters lie outside the admissible set of a model."""

    def __init__(self, message, z=None):
        self.z = z
        if z is not None:
            message = f"{message} (at z={z!r})"
        super().__init__(message)


class NumericalError(MicroforecastError, ArithmeticError):
    """Quadrature, bounding or optimisation failed numerically."""

    def __init__(self, message, achieved_tolerance=None):
        self.achieved_tolerance = achieved_tolerance
        if achieved_tolerance is not None:
            message = f"{message} (achieved error estimate {achieved_tolerance:.3g})"
        super().__init__(message)


class MajorantViolation(NumericalError):
    """A thinning proposal had intensity above its majorant."""


class SimulationError(MicroforecastError, RuntimeError):
    """A Monte Carlo replicate failed; carries the replicate index."""

    def __init__(self, message, replicate=None):
        self.replicate = replicate
        if replicate is not None:
            message = f"replicate {replicate}: {message}"
        super().__init__(message)


class InitializationError(InputError):
    """Starting values violate the constraints of a fit."""
