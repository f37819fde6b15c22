"""Exception hierarchy shared by all modules."""


class FNLSError(Exception):
    """Base class for all package errors."""


class DomainError(FNLSError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ValidationError(FNLSError, ValueError):
    """A configuration or parameter invariant is violated."""


class ParseError(FNLSError, ValueError):
    """Malformed configuration file."""


class SingularSample(FNLSError, ValueError):
    """Unsoftened Coulomb centre sits exactly on a grid node."""


class RankDeficient(FNLSError, ValueError):
    """Gram matrix too close to singular for symmetric orthonormalisation."""


class OccupationMismatch(FNLSError, ValueError):
    """Orbital mixing couples orbitals with different occupations."""


class InsufficientSamples(FNLSError, ValueError):
    """Not enough positive samples inside a fit window."""


class SolverError(FNLSError, RuntimeError):
    """Iterative method stopped without meeting its tolerance.

    ``result`` carries the best state reached, which remains usable.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class NoConvergence(SolverError):
    pass


class LineSearchStall(SolverError):
    pass


class OscillationDetected(SolverError):
    pass
