"""Exception hierarchy shared by the model, kernels and solvers."""


class SmoothingError(Exception):
    """Base class for every error raised by fgsmooth."""


class ProblemError(SmoothingError, ValueError):
    """A problem instance violates a structural invariant."""


class DimensionMismatch(ProblemError):
    pass


class InvalidCovariance(ProblemError):
    """A covariance block is not symmetric, not PSD, or (for observations) not PD."""


class ParseError(ProblemError):
    """The problem text file is malformed."""


class SolverError(SmoothingError):
    """A numerical failure inside a solver."""


class RankDeficient(SolverError):
    pass


class NotPositiveDefinite(SolverError):
    pass


class SingularCovariance(SolverError):
    """A covariance block could not be whitened (its Cholesky factorization failed)."""


class NonUnaryFactor(SolverError):
    """BIFM was given an observation that involves more than one state."""


class ScheduleMismatch(SolverError):
    pass


class IllPosed(SolverError):
    pass


class NonFiniteJacobian(SolverError):
    pass


class SolverFailure(SolverError):
    """Wraps a backend failure raised during Gauss-Newton iterations."""
