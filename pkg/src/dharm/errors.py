"""Exception types shared across the toolkit."""


class DharmError(Exception):
    """Base class for all toolkit errors."""


class DomainError(DharmError):
    """An argument lies outside the interval it must belong to."""


class NonFinite(DharmError):
    """An integral certified divergent where a finite value is required."""


class ConvergenceUndecided(DharmError):
    """A monotone limit could be certified neither finite nor divergent
    within the truncation budget."""


class InconsistentSpec(DharmError):
    """A diffusion specification violates a structural invariant."""


class TailNotCertified(DharmError):
    """A truncated tail integral could not be bounded below tolerance."""


class SeriesOverflow(DharmError):
    """The series solution exceeds the floating-point exponent budget."""


class SingularMesh(DharmError):
    """A mesh cell received zero speed-measure mass."""


class BiasUnbounded(DharmError):
    """Path truncation would bias the requested functional without bound."""


class CaseMismatch(DharmError):
    """The spec's effective interval matches none of the closed-form cases."""


class NotInDomainShape(DharmError):
    """No square-integrable density reproduces the derivative increments."""


class CrossCheckFailed(DharmError):
    """Closed-form and grid values disagree beyond tolerance."""
