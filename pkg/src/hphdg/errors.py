"""Exception types shared across the package."""


class HphdgError(Exception):
    """Base class for all package errors."""


class InvalidDomainError(HphdgError):
    """Degenerate or otherwise unusable computational domain."""


class MeshIntegrityError(HphdgError):
    """The mesh topology is inconsistent (unmatched interior faces, overlaps)."""


class UnsupportedOrderError(HphdgError):
    """Requested quadrature strength exceeds the supported range."""


class ContractViolationError(HphdgError):
    """A documented precondition of an operation was violated."""


class FluxHypothesisError(HphdgError):
    """The declared flux hypothesis fails at a point/normal pair."""

    def __init__(self, message, point=None, normal=None):
        super().__init__(message)
        self.point = point
        self.normal = normal


class ParameterError(HphdgError):
    """Problem parameters outside their admissible range."""


class LocalSolvabilityError(HphdgError):
    """An element-local volume block is singular."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class SingularTraceSystemError(HphdgError):
    """The condensed trace system could not be solved to tolerance."""


class EmptySelectorError(HphdgError):
    """An output-functional boundary selector matched no mortars."""


class UnsupportedErrorNormError(HphdgError):
    """Exact-solution error requested for a problem without an exact solution."""


class ConfigError(HphdgError):
    """Malformed or invalid run configuration."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AssumptionError(HphdgError):
    """Strict-mode failure of a structural assumption audit."""
