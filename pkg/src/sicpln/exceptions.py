"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class SicplnError(Exception):
    """Base class for all package errors."""


class DataError(SicplnError, ValueError):
    """Malformed or inconsistent input data (ragged CSV, negative counts, ...)."""


class NumericError(SicplnError, ArithmeticError):
    """A numerical routine failed (overflow, quadrature non-convergence, ...)."""


class QuadratureError(NumericError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
