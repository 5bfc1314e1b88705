"""Exception taxonomy shared across the package.

Every failure the estimation stack can signal derives from
:class:`GuidedQlikError`, so callers can catch one base type at the
boundary (the CLI maps it to exit code 3).
"""


class GuidedQlikError(Exception):
    """Base class for all estimation-stack errors."""


class DomainError(GuidedQlikError, ValueError):
    """A value lies outside the family's mean domain or response range."""


class CapabilityError(GuidedQlikError):
    """A request exceeds what the object supports (e.g. derivative order)."""


class SingularDesignError(GuidedQlikError):
    """Design matrix is rank deficient; coefficients are not identifiable."""


class ConvergenceError(GuidedQlikError):
    """Newton iteration failed to converge.

    Carries the last iterate so callers can diagnose (e.g. detect
    separation in logistic fits from a diverging norm).
    """

    def __init__(self, message, last_iterate=None, n_iter=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.n_iter = n_iter


class SparseRegionError(GuidedQlikError):
    """Too little (or degenerate) local data inside the kernel window."""


class GuideZeroError(GuidedQlikError):
    """The guide vanishes (within tolerance) where a nonzero value is needed."""


class EstimationError(GuidedQlikError):
    """A whole-curve estimation failed at every grid point."""


class SelectionError(GuidedQlikError):
    """Bandwidth or tuning-parameter selection has no admissible candidate."""


class SingularMomentError(GuidedQlikError):
    """Kernel moment matrix is numerically singular on the given region."""


class SingularHessianError(GuidedQlikError):
    """Local objective Hessian is numerically singular."""
