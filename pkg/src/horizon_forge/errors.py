"""Exception hierarchy shared by all modules."""


class HorizonForgeError(Exception):
    """Base class."""


class DomainError(HorizonForgeError, ValueError):
    """Input outside the admissible parameter range."""


class DimensionError(DomainError):
    """Inadmissible (family, dimension) pair or dimension mismatch."""


class NumericalError(HorizonForgeError, ArithmeticError):
    """A numerical procedure failed to converge or lost precision."""


class DegeneracyError(NumericalError):
    """Evaluation at a coordinate-degenerate point (horizon, axis)."""


class CertificationError(HorizonForgeError):
    """A certificate margin came out non-positive.

    ``details`` carries the margins and worst points so callers can report
    them without re-running the computation.
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


class ExhaustionError(CertificationError):
    """A bounded search ran out of candidates."""


class ContractViolation(CertificationError):
    """A precondition of a gluing contract does not hold."""


class InternalError(HorizonForgeError, RuntimeError):
    """Something that should be impossible for valid input."""
