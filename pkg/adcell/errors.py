"""
Exception hierarchy shared by the services and the command line.

Every error raised on purpose by the package derives from AdCellError and
carries the process exit code the CLI maps it to:
- 1: invalid input (instance, scenario, preconditions)
- 2: an exact oracle refused to enumerate (size guard)
- 3: an internal invariant failed (solver, rounding case engine, verify)
"""

from typing import Any, Optional


class AdCellError(Exception):
    """Base class for all package errors."""
    exit_code: int = 1


class InstanceError(AdCellError):
    """Raised for invalid instances, scenarios or malformed input files."""

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report


class StructuralError(AdCellError):
    """An assignment breaks one of the model invariants."""


class PreconditionError(AdCellError):
    """An operation was called outside its documented preconditions."""


class InfeasibleSolution(AdCellError):
    """An LP solution cannot drive an online allocator (x*_ij > p_j)."""


class SizeGuardError(AdCellError):
    """Exhaustive enumeration would exceed its configured guard."""
    exit_code = 2


class InvariantViolation(AdCellError):
    """A verified property does not hold."""
    exit_code = 3


class SolverError(AdCellError):
    """The simplex method reached a state impossible for box-bounded programs."""
    exit_code = 3


class CaseEngineError(AdCellError):
    """The rounding engine found no applicable case."""
    exit_code = 3

    def __init__(self, message: str, trace: Optional[Any] = None):
        super().__init__(message)
        self.trace = trace
