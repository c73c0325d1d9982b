"""
Exceptions raised by couponcli.

Every error a user can trigger derives from CouponcliError and carries the
process exit code the command line should end with.
"""

from typing import Any


class CouponcliError(Exception):
    exit_code = 1


class ValidationError(CouponcliError, ValueError):
    """
    Bad input: malformed config, parameters outside a model's domain
    """

    exit_code = 2


class ConfigError(ValidationError):
    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class AssumptionError(ValidationError):
    pass


class ConfigurationMismatchError(ValidationError):
    pass


class ResolutionError(ValidationError):
    pass


class SolverError(CouponcliError):
    exit_code = 3


class DegenerateChainError(SolverError):
    pass


class DegenerateCostsError(SolverError):
    pass


class NoConsistentCaseError(SolverError):
    def __init__(self, message: str, candidates: list[Any] | None = None):
        self.candidates = candidates or []
        lines = [message] + [f"  {c}" for c in self.candidates]
        super().__init__("\n".join(lines))


class NonConvergenceError(SolverError):
    pass


class NoRootError(SolverError):
    pass


class NonThresholdStructureError(SolverError):
    pass


class ZeroLikelihoodError(SolverError):
    pass


class ZeroEvidenceError(SolverError):
    pass


class OutputError(CouponcliError):
    exit_code = 4


class AmbiguousCaseWarning(UserWarning):
    """
    More than one closed-form case was self-consistent; the residual tie-break fired
    """


class ClosedFormDefectWarning(UserWarning):
    """
    A printed closed form disagrees with the exact computation
    """
