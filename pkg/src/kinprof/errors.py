"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: parameter/domain errors are exit 1,
computation failures exit 2, file-format problems exit 3.
"""


class ParameterError(ValueError):
    """A scalar argument violates its stated range."""


class DomainError(ValueError):
    """An input object is outside the operation's domain (for example a
    measure with an atom where the functional requires none)."""


class EvaluationError(RuntimeError):
    """A pointwise evaluation produced a non-finite value."""


class IterationError(RuntimeError):
    """An iterative solve failed to converge. Carries the history that
    led up to the failure so callers can report it."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class FormatError(ValueError):
    """A file on disk does not parse as the expected format."""
