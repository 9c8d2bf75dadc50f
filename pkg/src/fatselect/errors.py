"""Exception hierarchy shared by all modules."""


class FatSelectError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(FatSelectError, ValueError):
    """Invalid configuration. ``violations`` lists ``(path, message)`` pairs."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class DomainError(FatSelectError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DivergenceError(DomainError):
    """An integral that is infinite for the requested parameters."""


class AccuracyError(FatSelectError, ArithmeticError):
    """A quadrature missed its error target; ``estimate`` holds what it achieved."""

    def __init__(self, message, estimate):
        super().__init__(f"{message} (achieved error estimate {estimate:.3e})")
        self.estimate = estimate


class BuildError(FatSelectError):
    """A lookup table failed one of its invariants."""

    def __init__(self, invariant, detail=""):
        super().__init__(f"invariant '{invariant}' violated{': ' + detail if detail else ''}")
        self.invariant = invariant


class StepSizeError(FatSelectError):
    """Time step above the stability bound; ``suggested_dt`` is admissible."""

    def __init__(self, message, suggested_dt):
        super().__init__(f"{message}; suggested dt = {suggested_dt:.3e}")
        self.suggested_dt = suggested_dt


class RegularityError(FatSelectError):
    """Exponent difference (u(y)-u(x))/eps above the cap: the grid lost resolution."""

    def __init__(self, message, max_exponent):
        super().__init__(message)
        self.max_exponent = max_exponent


class ConstraintInfeasibleError(FatSelectError):
    """No sign change of max_x u over the mass bracket."""

    def __init__(self, bracket, max_values):
        lo, hi = bracket
        super().__init__(
            f"constraint infeasible on I in [{lo:g}, {hi:g}]: "
            f"max after step = {max_values[0]:.3e} at I={lo:g}, {max_values[1]:.3e} at I={hi:g}"
        )
        self.bracket = bracket
        self.max_values = max_values


class SimulationError(FatSelectError):
    """A run produced a non-finite state; ``dump`` carries the last good state."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class DiagnosticError(FatSelectError):
    """A diagnostic could not be evaluated on the given data."""
