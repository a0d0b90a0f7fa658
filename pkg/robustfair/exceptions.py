from typing import Any, Optional


class RobustFairError(Exception):
    """Base class for every error raised by robustfair"""


class DimensionMismatchError(RobustFairError, ValueError):
    """Vectors or matrices of incompatible sizes"""


class DomainError(RobustFairError, ValueError):
    """An input outside the domain of the requested operation"""


class SimplexError(DomainError):
    """A weight vector that is not on the probability simplex"""


class GridTooLargeError(DomainError):
    """A brute-force grid above the configured size guard"""


class ProjectionError(RobustFairError):
    """A Euclidean projection that failed or a constraint system with no feasible point"""


class CurvatureViolationError(RobustFairError):
    """The objective persistently broke its declared concave/convex contract"""


class ConvergenceError(RobustFairError):
    """An iterative method stopped at its cap without meeting its tolerance"""

    def __init__(self, message: str, best: Optional[Any] = None):
        super().__init__(message)
        self.best = best
