"""Error hierarchy shared by all modules.

Each error carries the process exit code the command-line front-end uses
when the error escapes a subcommand.
"""


class QCLimitError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class SchemaError(QCLimitError, ValueError):
    """Configuration or input payload failed validation."""

    exit_code = 2


class ContractViolation(QCLimitError, ValueError):
    """A numerical precondition or postcondition could not be met."""

    exit_code = 3


class GridMismatchError(ContractViolation):
    pass


class ResolutionError(ContractViolation):
    """Quadrature too coarse for the requested oscillation."""


class DomainExitError(ContractViolation):
    """A trajectory left the region on which the Hamiltonian is defined."""

    def __init__(self, message, time=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


class ConvergenceError(ContractViolation):
    pass


class ArtifactIOError(QCLimitError, OSError):
    exit_code = 4
