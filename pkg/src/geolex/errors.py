"""Exception classes shared across the toolkit.

The CLI maps these onto exit codes: ValidationError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class GeolexError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ValidationError(GeolexError):
    """Bad arguments, malformed configuration, or violated input contracts."""

    exit_code = 1


class DataError(GeolexError):
    """Structurally valid input that cannot support the requested operation
    (empty corpus, under-populated stratum, degenerate statistics input)."""

    exit_code = 2


class NumericalError(GeolexError):
    """Optimization failure: non-finite likelihood, non-convergence."""

    exit_code = 3
