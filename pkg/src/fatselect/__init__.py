"""Selection-mutation dynamics with fat-tailed mutations in Hopf-Cole variables.

Solvers for the rescaled nonlocal equation at fixed ``eps``, the constrained
Hamilton-Jacobi limit, a closed-form test problem and the diagnostics that
compare them.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AccuracyError,
    BuildError,
    ConfigError,
    ConstraintInfeasibleError,
    DiagnosticError,
    DivergenceError,
    DomainError,
    FatSelectError,
    RegularityError,
    SimulationError,
    StepSizeError,
)
from .grid import Field, Grid1D  # noqa: E402
from .kernel import (  # noqa: E402
    HamiltonianTable,
    KernelParams,
    build_hamiltonian_table,
    hamiltonian,
    hamiltonian_derivative,
    kernel_density,
    mutation_variance,
)
from .model import GrowthModel, InitialData, build_initial_data, check_assumptions, make_growth_model  # noqa: E402
from .report import CheckReport  # noqa: E402

__all__ = [
    "AccuracyError", "BuildError", "CheckReport", "ConfigError", "ConstraintInfeasibleError", "DiagnosticError",
    "DivergenceError", "DomainError", "FatSelectError", "Field", "Grid1D", "GrowthModel", "HamiltonianTable",
    "InitialData", "KernelParams", "RegularityError", "SimulationError", "StepSizeError", "build_hamiltonian_table",
    "build_initial_data", "check_assumptions", "hamiltonian", "hamiltonian_derivative", "kernel_density",
    "make_growth_model", "mutation_variance",
]
