"""Exception types shared across the package."""


class PrivtabError(Exception):
    """Base class for every error this package raises on purpose."""


class ParameterError(PrivtabError, ValueError):
    """A parameter lies outside its documented domain."""


class MechanismMismatchError(ParameterError):
    """Privacy parameters do not fit the requested mechanism."""


class FactorizationError(ParameterError):
    """Cholesky factorization failed on a non-SPD matrix.

    ``minor`` is the 1-based order of the first leading principal minor
    that is not positive definite.
    """

    def __init__(self, message: str, minor: int | None = None):
        super().__init__(message)
        self.minor = minor


class InputError(PrivtabError, ValueError):
    """Caller-supplied data is malformed or inconsistent."""


class CsvFormatError(InputError):
    """CSV input violates the expected shape (ragged rows, duplicate headers)."""


class BudgetExhaustedError(PrivtabError):
    """A privacy-budget charge was refused.

    Carries only the operation label and the remaining budget; never any
    data-dependent content.
    """

    def __init__(self, label: str, remaining_epsilon: float, remaining_delta: float):
        super().__init__(
            f"privacy budget exhausted: charge for {label!r} refused "
            f"(remaining epsilon={remaining_epsilon:.6g}, delta={remaining_delta:.6g})"
        )
        self.label = label
        self.remaining_epsilon = remaining_epsilon
        self.remaining_delta = remaining_delta


class InternalConsistencyError(PrivtabError):
    """An internal invariant was violated; indicates a bug or a bad rule."""
