"""Exception taxonomy shared across the package.

Errors are grouped by what went wrong, not by which module raised them:
parameter/domain problems, geometric degeneracies, resolution shortfalls,
data corruption, and iteration failures.  The CLI maps these onto exit
codes (validation -> 2, non-convergence -> 3).
"""


class BergmanLabError(Exception):
    """Base class for all package errors."""


class DomainParameterError(BergmanLabError, ValueError):
    """A scale, exponent or threshold lies outside its admissible range."""


class UndefinedProjectionError(BergmanLabError, ValueError):
    """Radial boundary projection requested at the origin."""


class NearSingularityError(BergmanLabError, FloatingPointError):
    """Kernel evaluation too close to the boundary diagonal."""


class CollarError(BergmanLabError, ValueError):
    """A point required to lie in the boundary collar does not."""


class ConstructionError(BergmanLabError, RuntimeError):
    """A net or cell structure could not be built (sample too coarse)."""


class ResolutionError(BergmanLabError, RuntimeError):
    """A region holds fewer quadrature nodes than averages require."""


class DataError(BergmanLabError, ValueError):
    """Matrix data violates a structural requirement (e.g. not PSD)."""


class IterationError(BergmanLabError, RuntimeError):
    """Power iteration failed to meet tolerance within the budget."""

    def __init__(self, message, value=None, residual=None, iterations=None):
        super().__init__(message)
        self.value = value
        self.residual = residual
        self.iterations = iterations


class FitError(BergmanLabError, ValueError):
    """Regression input degenerate (empty or without spread)."""


class ReverseHolderError(BergmanLabError, RuntimeError):
    """No reverse-Holder exponent above 1 found; step weights must admit one."""


class DominationViolationError(BergmanLabError, RuntimeError):
    """Projected value escapes the sparse convex-body hull at a sample."""


class CacheError(BergmanLabError, RuntimeError):
    """Cache file unusable."""


class StaleCacheError(CacheError):
    """Cache file does not match the requested build key."""


class CorruptCacheError(CacheError):
    """Cache file cannot be parsed."""


class ConfigError(BergmanLabError, ValueError):
    """Run configuration failed validation."""
