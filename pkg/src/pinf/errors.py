"""Exception types raised across the package."""


class PinfError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(PinfError, ValueError):
    pass


class NumericRangeError(PinfError, ArithmeticError):
    """A p-power overflowed even after max-factoring."""

    def __init__(self, p, scale):
        self.p = p
        self.scale = scale
        super().__init__(f"p-power overflow: p={p!r}, max gradient={scale!r}")


class PreconditionError(PinfError, ValueError):
    pass


class InfeasibleResolutionError(PinfError, ValueError):
    """The volume budget is smaller than the finest boundary layer on the grid."""


class DatumError(PinfError):
    """Boundary datum for which the constrained problem is ill-posed."""

    datum_class = None


class ConstraintInactiveError(DatumError):
    """Zero net flux: the volume constraint plays no role."""

    datum_class = "ZeroMass"


class UnboundedBelowError(DatumError):
    """Negative net flux: the energy is unbounded below along constants.

    ``witness`` holds ``(k, energy(-k))`` pairs.
    """

    datum_class = "NegativeMass"

    def __init__(self, message, witness):
        self.witness = witness
        super().__init__(message)


class NotARayError(PinfError):
    def __init__(self, message, ray=None):
        self.ray = ray
        super().__init__(message)


class MeasureUnstableError(PinfError):
    def __init__(self, message, totals=None):
        self.totals = totals
        super().__init__(message)


class NonConvergenceError(PinfError):
    """Raised by pipelines that cannot continue past a non-converged solve."""

    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)


class ConfigError(PinfError, ValueError):
    pass
