"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class MacaevLabError(Exception):
    """Base class for library errors."""


class ResourceCapError(MacaevLabError):
    """A configured size cap (ball elements, dense matrix size) was exceeded."""


class InvariantViolation(MacaevLabError):
    """An internal consistency check failed; results must not be trusted."""


class CertificateError(InvariantViolation):
    """A dual certificate failed its divergence identity or norm bookkeeping."""


class InvertedSandwich(InvariantViolation):
    """A certified lower bound exceeded a computed upper bound."""


class DomainError(MacaevLabError):
    """A function or radius falls outside the region an object is valid on."""


class ScheduleError(MacaevLabError):
    """No admissible cutoff schedule exists for the requested norming function."""
