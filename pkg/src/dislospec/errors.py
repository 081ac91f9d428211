"""Exception types shared across the package.

ValidationError maps to CLI exit status 1, NumericalError to exit status 2.
"""


class ValidationError(ValueError):
    """Invalid input: malformed spec, out-of-range parameter, violated precondition."""


class NumericalError(RuntimeError):
    """A numerical procedure failed beyond its built-in retries."""
