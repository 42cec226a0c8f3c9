"""Exception hierarchy shared by all narrownet modules.

Every domain failure derives from :class:`NarrowNetError`; the CLI maps these
to exit code 1.
"""


class NarrowNetError(Exception):
    """Base class for domain errors."""


class InputError(NarrowNetError, ValueError):
    """Shape or dimension mismatch in a call argument."""


class SchemaError(NarrowNetError, ValueError):
    """A network or certificate document does not match its schema."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class PreconditionError(NarrowNetError, ValueError):
    """An operation was called outside its documented preconditions."""


class UnsupportedError(NarrowNetError):
    """Input is valid but lies outside what the algorithm handles."""


class DegeneratePatternError(PreconditionError):
    """A hidden preactivation is exactly zero at the requested point."""


class ConvergenceError(NarrowNetError):
    """Budget retries were exhausted; ``report`` holds the last attempt."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class IncompleteCertificateError(NarrowNetError):
    """Escape construction hit its segment cap; ``vertices`` is the partial path."""

    def __init__(self, message, vertices=None):
        self.vertices = vertices or []
        super().__init__(message)


class MalformedCertificateError(NarrowNetError, ValueError):
    """Certificate has no vertices or a zero terminal direction."""
