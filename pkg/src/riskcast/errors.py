"""Exception hierarchy shared across the package."""


class RiskcastError(Exception):
    """Base class for all package errors."""


class ParameterError(RiskcastError):
    """A parameter value is outside its admissible range."""


class ShapeError(RiskcastError):
    """Array dimensions do not match the operation's contract."""


class CapacityError(ParameterError):
    """A configured size cap was exceeded (e.g. too many factor orderings)."""


class WindowError(ParameterError):
    """Not enough history for a windowed computation."""


class FormatError(RiskcastError):
    """An input file could not be parsed."""


class AlignmentError(RiskcastError):
    """Two inputs share no usable dates."""


class IntegrityError(RiskcastError):
    """An input violates a structural invariant (e.g. duplicate dates)."""


class NumericError(RiskcastError):
    """A numerical operation failed (PD loss, NaN, zero variance, ...)."""


class DegeneracyError(NumericError):
    """A closed-form solution is degenerate for the supplied inputs."""


class MomentError(NumericError):
    """A required predictive moment does not exist (degrees of freedom <= 2)."""


class InfeasibleError(RiskcastError):
    """A constrained optimization problem has no feasible point."""
