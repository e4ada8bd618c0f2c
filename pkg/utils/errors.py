"""
Exception hierarchy shared by all solver modules.
"""
from typing import Optional, Sequence


class SolverError(Exception):
    """Base class for every error raised by the solver."""


class ModelFileError(SolverError):
    """Model file could not be parsed; message cites line and field."""

    def __init__(self, message: str, field: str = "", line: Optional[int] = None):
        self.field = field
        self.line = line
        location = f"line {line}" if line is not None else "unknown line"
        prefix = f"{location}, field '{field}'" if field else location
        super().__init__(f"{prefix}: {message}")


class ModelValidationError(SolverError):
    """Triplet violates a structural condition (see validate_model)."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnboundedSupportWithoutTailModel(SolverError):
    """A density part has unbounded support but no tail-decay annotation."""


class DomainError(SolverError):
    """Argument lies outside the domain of the operation (e.g. y not in C0)."""


class QuadratureFailure(SolverError):
    """Quadrature error estimate exceeds the configured tolerance."""


class NuipViolated(SolverError):
    """No-unbounded-increasing-profit fails; carries the witness direction."""

    def __init__(self, message: str, witness=None):
        self.witness = witness
        super().__init__(message)


class C3Violated(SolverError):
    """Condition (C3) fails for a non-star-shaped constraint set."""


class PreconditionFailed(SolverError):
    """Operation called outside its scope."""


class TailDivergence(SolverError):
    """An integral against the jump measure diverges by its tail annotation."""


class InfiniteActivity(SolverError):
    """Jump measure has infinite mass; exact simulation is impossible."""


class SimulationError(SolverError):
    """Monte Carlo engine cannot produce the requested paths."""


class ProjectionNotClosed(UserWarning):
    """Projection of C∩C0 onto N-perp may fail to be closed; maximizer not claimed."""
