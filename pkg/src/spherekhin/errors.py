"""Exception types raised across the package."""


class SphereKhinError(ValueError):
    """Base class for invalid-input conditions."""


class DomainError(SphereKhinError):
    """An argument lies outside the domain where a quantity is defined."""


class SingularIntegrandError(SphereKhinError):
    """The requested expectation diverges (non-integrable singularity)."""


class ExactCapExceeded(SphereKhinError):
    """Deterministic quadrature would exceed the configured size cap; use Monte Carlo."""


class PreconditionError(SphereKhinError):
    """A documented precondition of an operation does not hold."""
