"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
precondition violations exit 3, threshold breaches exit 4.
"""


class MottlabError(Exception):
    pass


class ParameterError(MottlabError, ValueError):
    """A model or operation parameter is outside its admissible range."""


class DomainError(MottlabError, ValueError):
    """An index or argument is outside the object it addresses."""


class PreconditionError(MottlabError, RuntimeError):
    """An operation was invoked on inputs that are too small or unprepared.

    Carries ``required`` when a larger environment window would fix it.
    """

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class ProvenanceError(MottlabError, RuntimeError):
    """Two artifacts that must share provenance do not."""


class GridError(MottlabError, ValueError):
    """A discretisation grid is degenerate.  Carries ``suggested`` step."""

    def __init__(self, message, suggested=None):
        super().__init__(message)
        self.suggested = suggested


class ConfigError(MottlabError, ValueError):
    """A CLI configuration document is malformed."""


class ThresholdBreach(MottlabError, RuntimeError):
    """An experiment finished but a configured acceptance threshold failed."""
