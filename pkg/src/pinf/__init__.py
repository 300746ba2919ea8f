"""Volume-constrained p-Laplacian Neumann problems and their p -> infinity limit."""

from .errors import (
    ConfigError,
    ConstraintInactiveError,
    DatumError,
    InfeasibleResolutionError,
    InvalidArgumentError,
    MeasureUnstableError,
    NonConvergenceError,
    NotARayError,
    NumericRangeError,
    PinfError,
    PreconditionError,
    UnboundedBelowError,
)
from .mesh import Grid, boundary_trace, build_disk, build_interval
from .energy import (
    EnergyBreakdown,
    Field,
    ProblemSpec,
    boundary_term,
    dirichlet_term,
    energy,
    energy_gradient,
    neumann_residual_p,
    volume_positive,
)
from .solver import (
    DatumClass,
    SolveOptions,
    SolveReport,
    check_datum,
    initial_guess,
    minimize,
    project_volume,
    verify_weak_solution,
)

__all__ = [
    "ConfigError",
    "ConstraintInactiveError",
    "DatumClass",
    "DatumError",
    "EnergyBreakdown",
    "Field",
    "Grid",
    "InfeasibleResolutionError",
    "InvalidArgumentError",
    "MeasureUnstableError",
    "NonConvergenceError",
    "NotARayError",
    "NumericRangeError",
    "PinfError",
    "PreconditionError",
    "ProblemSpec",
    "SolveOptions",
    "SolveReport",
    "UnboundedBelowError",
    "boundary_term",
    "boundary_trace",
    "build_disk",
    "build_interval",
    "check_datum",
    "dirichlet_term",
    "energy",
    "energy_gradient",
    "initial_guess",
    "minimize",
    "neumann_residual_p",
    "project_volume",
    "verify_weak_solution",
    "volume_positive",
]

__version__ = "0.1.0"
