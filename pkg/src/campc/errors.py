"""Exception types shared across the package."""


class CampcError(Exception):
    """Base class for all campc errors."""


class DimensionMismatch(CampcError):
    """Operands have incompatible shapes."""


class NotSymmetric(CampcError):
    """Matrix fails the symmetry check."""


class NotPositiveDefinite(CampcError):
    """Matrix is not positive definite (Cholesky pivot too small)."""


class NoConvergence(CampcError):
    """Iterative method hit its iteration limit before converging."""


class ZeroRow(CampcError):
    """A constraint matrix contains an identically zero row."""


class NonPositiveScale(CampcError):
    """Row scaling requires strictly positive diagonal entries."""


class EmptyStore(CampcError):
    """History store has no records."""


class SizeGuard(CampcError):
    """Problem exceeds the combinatorial limits of the enumeration oracle."""


class SolveFailed(CampcError):
    """QP solve did not reach an optimal point (after any fallback)."""


class ConfigError(CampcError):
    """Scenario configuration is missing, malformed, or inconsistent."""
