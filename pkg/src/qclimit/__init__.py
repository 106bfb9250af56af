"""Phase-space quantum mechanics, self-induced decoherence and the classical limit."""

from .exceptions import (
    ContractViolation,
    DomainExitError,
    GridMismatchError,
    QCLimitError,
    ResolutionError,
    SchemaError,
)
from .polynomial import Polynomial
from .phasespace import (
    PhaseFunction,
    PhaseGrid,
    SymplecticForm,
    Trajectory,
    hamilton_flow,
    integrate_phase,
    poisson_bracket,
)

__version__ = "0.1.0"
